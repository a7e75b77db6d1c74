#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>

#include "lexcorpus/errors.hpp"
#include "lexcorpus/utf8.hpp"

namespace lexcorpus {

enum class InputFormat { Plain, Html, External };

inline InputFormat input_format_from_string(std::string_view s) {
    if (s == "plain") return InputFormat::Plain;
    if (s == "html") return InputFormat::Html;
    if (s == "external") return InputFormat::External;
    throw ConfigError("unknown input format '" + std::string(s) + "' (expected plain|html|external)");
}

/// External extractor invocation, e.g. {"pdftotext", "-layout", "{input}", "-"}.
/// `{input}` is replaced by the path of a temporary file holding the bytes;
/// when absent the path is appended as the last argument.
struct ExtractorConfig {
    std::string command;
    std::size_t stderr_excerpt_bytes = 256;
};

namespace detail {

inline std::string shell_quote(std::string_view s) {
    std::string q = "'";
    for (char c : s) {
        if (c == '\'') q += "'\\''";
        else q.push_back(c);
    }
    q.push_back('\'');
    return q;
}

inline bool starts_with_ci(std::string_view s, std::size_t pos, std::string_view prefix) {
    if (pos + prefix.size() > s.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        const char a = static_cast<char>(std::tolower(static_cast<unsigned char>(s[pos + i])));
        if (a != prefix[i]) return false;
    }
    return true;
}

inline bool is_block_tag(std::string_view name) {
    static constexpr std::string_view kBlocks[] = {"p",  "br", "div", "li", "ul", "ol", "tr", "table", "h1",
                                                   "h2", "h3", "h4",  "h5", "h6", "section", "article",
                                                   "blockquote", "pre", "hr", "title"};
    for (auto b : kBlocks) {
        if (name == b) return true;
    }
    return false;
}

inline void append_entity(std::string& out, std::string_view entity) {
    if (entity.size() > 1 && entity[0] == '#') {
        char32_t cp = 0;
        try {
            if (entity[1] == 'x' || entity[1] == 'X') cp = static_cast<char32_t>(std::stoul(std::string(entity.substr(2)), nullptr, 16));
            else cp = static_cast<char32_t>(std::stoul(std::string(entity.substr(1)), nullptr, 10));
        } catch (...) {
            cp = utf8::kReplacement;
        }
        if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = utf8::kReplacement;
        utf8::append(out, cp);
        return;
    }
    static const std::pair<std::string_view, char32_t> kNamed[] = {
        {"amp", '&'},      {"lt", '<'},        {"gt", '>'},        {"quot", '"'},     {"apos", '\''},
        {"nbsp", 0x00A0},  {"sect", 0x00A7},   {"para", 0x00B6},   {"copy", 0x00A9},  {"reg", 0x00AE},
        {"ndash", 0x2013}, {"mdash", 0x2014},  {"lsquo", 0x2018},  {"rsquo", 0x2019}, {"ldquo", 0x201C},
        {"rdquo", 0x201D}, {"hellip", 0x2026}, {"eacute", 0x00E9}, {"euro", 0x20AC},
    };
    for (const auto& [name, cp] : kNamed) {
        if (entity == name) {
            utf8::append(out, cp);
            return;
        }
    }
    out += '&';
    out += entity;
    out += ';';
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n\f\v");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n\f\v");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// Strips tags, drops script/style/comment bodies, decodes entities. Block
/// tags become newlines.
inline std::string html_to_text(std::string_view html) {
    std::string out;
    out.reserve(html.size());
    std::size_t i = 0;
    while (i < html.size()) {
        const char c = html[i];
        if (c == '<') {
            if (html.substr(i, 4) == "<!--") {
                const auto end = html.find("-->", i + 4);
                i = end == std::string_view::npos ? html.size() : end + 3;
                continue;
            }
            const auto close = html.find('>', i + 1);
            if (close == std::string_view::npos) {
                out.append(html.substr(i));
                break;
            }
            std::size_t n = i + 1;
            if (n < close && html[n] == '/') ++n;
            const std::size_t name_start = n;
            while (n < close && std::isalnum(static_cast<unsigned char>(html[n]))) ++n;
            std::string name(html.substr(name_start, n - name_start));
            for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            const bool opening = html[i + 1] != '/';
            if (opening && (name == "script" || name == "style")) {
                const std::string end_tag = "</" + name;
                std::size_t e = close + 1;
                while (e < html.size() && !detail::starts_with_ci(html, e, end_tag)) ++e;
                const auto gt = html.find('>', e);
                i = gt == std::string_view::npos ? html.size() : gt + 1;
                continue;
            }
            if (detail::is_block_tag(name)) out.push_back('\n');
            i = close + 1;
        } else if (c == '&') {
            const auto semi = html.find(';', i + 1);
            if (semi != std::string_view::npos && semi - i <= 10) {
                detail::append_entity(out, html.substr(i + 1, semi - i - 1));
                i = semi + 1;
            } else {
                out.push_back(c);
                ++i;
            }
        } else {
            out.push_back(c);
            ++i;
        }
    }
    // Collapse runs of blank lines introduced by block tags.
    std::string collapsed;
    collapsed.reserve(out.size());
    int newlines = 0;
    for (char ch : out) {
        if (ch == '\n') {
            if (++newlines > 2) continue;
        } else if (ch != ' ' && ch != '\t' && ch != '\r') {
            newlines = 0;
        }
        collapsed.push_back(ch);
    }
    return detail::trim(collapsed);
}

/// Runs the configured extractor on `input` and returns its stdout.
inline std::string run_external_extractor(std::string_view input, const ExtractorConfig& cfg) {
    if (cfg.command.empty()) throw ConfigError("external extraction requested but no extractor command configured");
    namespace fs = std::filesystem;
    const auto tmpdir = fs::temp_directory_path();
    std::string in_tmpl = (tmpdir / "lexcorpus-in-XXXXXX").string();
    std::string err_tmpl = (tmpdir / "lexcorpus-err-XXXXXX").string();
    const int in_fd = mkstemp(in_tmpl.data());
    if (in_fd < 0) throw IoError("cannot create temporary input file");
    close(in_fd);
    const int err_fd = mkstemp(err_tmpl.data());
    if (err_fd < 0) {
        fs::remove(in_tmpl);
        throw IoError("cannot create temporary stderr file");
    }
    close(err_fd);
    struct Cleanup {
        std::string a, b;
        ~Cleanup() {
            std::error_code ec;
            std::filesystem::remove(a, ec);
            std::filesystem::remove(b, ec);
        }
    } cleanup{in_tmpl, err_tmpl};

    {
        std::ofstream f(in_tmpl, std::ios::binary);
        f.write(input.data(), static_cast<std::streamsize>(input.size()));
        if (!f) throw IoError("cannot write temporary input file");
    }

    std::string cmd = cfg.command;
    const std::string quoted = detail::shell_quote(in_tmpl);
    if (auto p = cmd.find("{input}"); p != std::string::npos) cmd.replace(p, 7, quoted);
    else cmd += " " + quoted;
    cmd += " 2>" + detail::shell_quote(err_tmpl);

    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw ExtractionFailed("cannot start extractor: " + cfg.command);
    std::string out;
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
    const int status = pclose(pipe);
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (code != 0) {
        std::ifstream ef(err_tmpl, std::ios::binary);
        std::string err((std::istreambuf_iterator<char>(ef)), std::istreambuf_iterator<char>());
        if (err.size() > cfg.stderr_excerpt_bytes) err.resize(cfg.stderr_excerpt_bytes);
        throw ExtractionFailed("extractor exited with status " + std::to_string(code) + ": " + detail::trim(err));
    }
    return out;
}

inline std::string extract_text(std::string_view input, InputFormat format, const ExtractorConfig& extractor = {}) {
    switch (format) {
        case InputFormat::Plain: return std::string(input);
        case InputFormat::Html: return html_to_text(input);
        case InputFormat::External: {
            // Extractors such as pdftotext end with newlines or form feeds.
            std::string out = run_external_extractor(input, extractor);
            while (!out.empty() && (out.back() == '\n' || out.back() == '\f' || out.back() == '\r')) out.pop_back();
            return out;
        }
    }
    throw ConfigError("unknown input format");
}

}  // namespace lexcorpus
