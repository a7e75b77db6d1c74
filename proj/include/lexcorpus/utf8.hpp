#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace lexcorpus::utf8 {

inline constexpr char32_t kReplacement = 0xFFFD;

/// Decodes one code point starting at `pos`. On malformed input returns
/// kReplacement and advances by one byte. Returns false at end of input.
inline bool next(std::string_view s, std::size_t& pos, char32_t& cp) noexcept {
    if (pos >= s.size()) return false;
    const auto b0 = static_cast<unsigned char>(s[pos]);
    if (b0 < 0x80) {
        cp = b0;
        ++pos;
        return true;
    }
    int len = 0;
    char32_t min = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
        min = 0x80;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
        min = 0x800;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
        min = 0x10000;
    } else {
        cp = kReplacement;
        ++pos;
        return true;
    }
    if (pos + len > s.size()) {
        cp = kReplacement;
        ++pos;
        return true;
    }
    for (int i = 1; i < len; ++i) {
        const auto b = static_cast<unsigned char>(s[pos + i]);
        if ((b & 0xC0) != 0x80) {
            cp = kReplacement;
            ++pos;
            return true;
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
        cp = kReplacement;
        ++pos;
        return true;
    }
    pos += len;
    return true;
}

inline void append(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

struct SanitizeResult {
    std::string text;
    std::size_t replacements = 0;
};

/// Replaces every malformed sequence with U+FFFD. Valid U+FFFD already in the
/// input is not counted.
inline SanitizeResult sanitize(std::string_view s) {
    SanitizeResult r;
    r.text.reserve(s.size());
    std::size_t pos = 0;
    char32_t cp = 0;
    while (pos < s.size()) {
        const std::size_t start = pos;
        next(s, pos, cp);
        if (cp == kReplacement && !(pos - start == 3 && s.substr(start, 3) == "\xEF\xBF\xBD")) {
            ++r.replacements;
            append(r.text, kReplacement);
        } else {
            r.text.append(s.substr(start, pos - start));
        }
    }
    return r;
}

inline bool is_valid(std::string_view s) { return sanitize(s).replacements == 0; }

}  // namespace lexcorpus::utf8
