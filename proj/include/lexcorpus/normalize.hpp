#pragma once

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <stdexcept>
#include <string>
#include <string_view>

#include "lexcorpus/utf8.hpp"

namespace lexcorpus {

/// Unicode Normalization Form KC. Malformed UTF-8 is replaced with U+FFFD first.
inline std::string normalize_nfkc(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfkc = icu::Normalizer2::getNFKCInstance(status);
    if (U_FAILURE(status)) throw std::runtime_error(std::string("ICU NFKC unavailable: ") + u_errorName(status));
    const icu::UnicodeString src =
        icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    if (nfkc->isNormalized(src, status) && U_SUCCESS(status)) {
        std::string out;
        src.toUTF8String(out);
        return out;
    }
    status = U_ZERO_ERROR;
    const icu::UnicodeString dst = nfkc->normalize(src, status);
    if (U_FAILURE(status)) throw std::runtime_error(std::string("NFKC normalization failed: ") + u_errorName(status));
    std::string out;
    dst.toUTF8String(out);
    return out;
}

namespace detail {

inline bool is_blank(std::string_view line) { return line.find_first_not_of(" \t\r\f\v") == std::string_view::npos; }

inline bool ends_sentence(std::string_view line) {
    auto end = line.find_last_not_of(" \t\r\f\v");
    if (end == std::string_view::npos) return true;
    line = line.substr(0, end + 1);
    // Skip closing quotes/brackets: `held."` still ends a sentence.
    while (!line.empty() && (line.back() == '"' || line.back() == '\'' || line.back() == ')' || line.back() == ']')) {
        line.remove_suffix(1);
    }
    if (line.ends_with("\xE2\x80\x9D") || line.ends_with("\xE2\x80\x99")) line.remove_suffix(3);  // ” ’
    if (line.empty()) return false;
    if (line.ends_with("\xE2\x80\xA6")) return true;  // …
    const char c = line.back();
    return c == '.' || c == '!' || c == '?';
}

inline bool starts_lowercase(std::string_view line) {
    std::size_t pos = 0;
    char32_t cp = 0;
    if (!utf8::next(line, pos, cp)) return false;
    return u_islower(static_cast<UChar32>(cp));
}

}  // namespace detail

/// Rejoins hard-wrapped lines. A newline becomes a space when the line before
/// does not end a sentence and the line after starts with a lowercase letter.
/// Blank lines are kept.
inline std::string repair_lines(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::size_t start = 0;
    std::string_view prev;
    bool have_prev = false;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        const std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        if (have_prev) {
            if (!detail::is_blank(prev) && !detail::is_blank(line) && !detail::ends_sentence(prev) &&
                detail::starts_lowercase(line)) {
                while (!out.empty() && (out.back() == ' ' || out.back() == '\t' || out.back() == '\r')) out.pop_back();
                out.push_back(' ');
            } else {
                out.push_back('\n');
            }
        }
        out.append(line);
        prev = line;
        have_prev = true;
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return out;
}

}  // namespace lexcorpus
