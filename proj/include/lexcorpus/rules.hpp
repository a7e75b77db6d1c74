#pragma once

#include <unicode/uchar.h>

#include <boost/regex.hpp>

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "lexcorpus/corpus.hpp"
#include "lexcorpus/errors.hpp"
#include "lexcorpus/utf8.hpp"

namespace lexcorpus {

enum class RuleAction { Remove, Reject };

struct Rule {
    std::string name;
    std::string pattern;
    RuleAction action = RuleAction::Remove;
    std::shared_ptr<const boost::regex> compiled;
};

/// Ordered, named regular-expression rules plus the repeated-n-gram settings.
/// Patterns are compiled on construction, so a bad pattern fails at load.
class RuleSet {
public:
    RuleSet() = default;

    RuleSet& add(std::string name, std::string pattern, RuleAction action) {
        for (const auto& r : rules_) {
            if (r.name == name) throw ConfigError("duplicate rule name '" + name + "'");
        }
        std::shared_ptr<const boost::regex> re;
        try {
            re = std::make_shared<const boost::regex>(pattern, boost::regex::perl);
        } catch (const boost::regex_error& e) {
            throw ConfigError("rule '" + name + "': invalid pattern: " + e.what());
        }
        rules_.push_back(Rule{std::move(name), std::move(pattern), action, std::move(re)});
        return *this;
    }

    [[nodiscard]] const std::vector<Rule>& rules() const noexcept { return rules_; }

    std::size_t repeated_ngram_len = 10;
    std::uint64_t repeated_ngram_min_count = 100;

    /// Page/line numbers on their own line, transcript line-number prefixes,
    /// HTML tags and entities.
    static RuleSet defaults() {
        RuleSet rs;
        rs.add("page-number-line", R"((?m)^[ \t]*(?:page|Page|PAGE|p\.)[ \t]*\d{1,5}(?:[ \t]+of[ \t]+\d{1,5})?[ \t]*(?:\r?\n|$))",
               RuleAction::Remove);
        rs.add("bare-number-line", R"((?m)^[ \t]*-?[ \t]*\d{1,4}[ \t]*-?[ \t]*\r?\n)", RuleAction::Remove);
        rs.add("line-number-prefix", R"((?m)^[ \t]*\d{1,2}[ \t]{2,}(?=\S))", RuleAction::Remove);
        rs.add("html-tag", R"(</?[A-Za-z][A-Za-z0-9]*(?:\s[^<>]*)?/?>)", RuleAction::Remove);
        rs.add("html-entity", R"(&(?:[A-Za-z]{2,8}|#[0-9]{1,7}|#[xX][0-9A-Fa-f]{1,6});)", RuleAction::Remove);
        return rs;
    }

private:
    std::vector<Rule> rules_;
};

inline RuleAction rule_action_from_string(const std::string& s) {
    if (s == "remove") return RuleAction::Remove;
    if (s == "reject") return RuleAction::Reject;
    throw ConfigError("rule action must be remove|reject, got '" + s + "'");
}

/// {"rules": [{name, pattern, action}], "repeated_ngram_len", "repeated_ngram_min_count",
///  "include_defaults": bool}
inline RuleSet rule_set_from_json(const nlohmann::json& j) {
    static const std::set<std::string> kKeys = {"rules", "repeated_ngram_len", "repeated_ngram_min_count",
                                                "include_defaults"};
    for (const auto& [k, v] : j.items()) {
        if (!kKeys.count(k)) throw ConfigError("unknown rule-set key '" + k + "'");
    }
    RuleSet rs = j.value("include_defaults", true) ? RuleSet::defaults() : RuleSet{};
    if (auto it = j.find("rules"); it != j.end()) {
        for (const auto& r : *it) {
            if (!r.contains("name") || !r.contains("pattern")) throw ConfigError("rule needs name and pattern");
            rs.add(r.at("name").get<std::string>(), r.at("pattern").get<std::string>(),
                   rule_action_from_string(r.value("action", "remove")));
        }
    }
    rs.repeated_ngram_len = j.value("repeated_ngram_len", rs.repeated_ngram_len);
    rs.repeated_ngram_min_count = j.value("repeated_ngram_min_count", rs.repeated_ngram_min_count);
    if (rs.repeated_ngram_len == 0) throw ConfigError("repeated_ngram_len must be >= 1");
    return rs;
}

inline nlohmann::json to_json(const RuleSet& rs) {
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : rs.rules()) {
        rules.push_back({{"name", r.name}, {"pattern", r.pattern},
                         {"action", r.action == RuleAction::Remove ? "remove" : "reject"}});
    }
    return {{"rules", rules}, {"repeated_ngram_len", rs.repeated_ngram_len},
            {"repeated_ngram_min_count", rs.repeated_ngram_min_count}, {"include_defaults", false}};
}

// ---------------------------------------------------------------------------
// Repeated character / whitespace n-grams

namespace detail {

inline bool is_space_cp(char32_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' || u_isspace(static_cast<UChar32>(c)); }
inline bool is_alnum_cp(char32_t c) { return c < 0x80 ? std::isalnum(static_cast<int>(c)) != 0 : u_isalnum(static_cast<UChar32>(c)) != 0; }

struct DecodedText {
    std::vector<char32_t> cps;
    std::vector<std::size_t> offsets;  // byte offset of each code point, plus end
};

inline DecodedText decode(std::string_view text) {
    DecodedText d;
    d.cps.reserve(text.size());
    d.offsets.reserve(text.size() + 1);
    std::size_t pos = 0;
    char32_t cp = 0;
    while (pos < text.size()) {
        d.offsets.push_back(pos);
        utf8::next(text, pos, cp);
        d.cps.push_back(cp);
    }
    d.offsets.push_back(text.size());
    return d;
}

/// A window qualifies when it has no alphanumerics and at most one distinct
/// non-whitespace character ("----------", ". . . . . ", ten spaces).
inline bool repeated_window(const std::vector<char32_t>& cps, std::size_t at, std::size_t n) {
    char32_t seen = 0;
    bool have = false;
    for (std::size_t i = at; i < at + n; ++i) {
        const char32_t c = cps[i];
        if (is_space_cp(c)) continue;
        if (is_alnum_cp(c)) return false;
        if (!have) {
            seen = c;
            have = true;
        } else if (c != seen) {
            return false;
        }
    }
    return true;
}

/// Calls fn(window_start) for every qualifying window. Only runs of
/// non-alphanumeric code points of length >= n are inspected.
template <typename Fn>
void for_each_repeated_window(const DecodedText& d, std::size_t n, Fn&& fn) {
    const std::size_t len = d.cps.size();
    std::size_t i = 0;
    while (i < len) {
        if (is_alnum_cp(d.cps[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < len && !is_alnum_cp(d.cps[j])) ++j;
        if (j - i >= n) {
            for (std::size_t w = i; w + n <= j; ++w) {
                if (repeated_window(d.cps, w, n)) fn(w);
            }
        }
        i = j;
    }
}

}  // namespace detail

/// Corpus-global frequency table of repeated-character n-grams. Counts every
/// (overlapping) window; merge is associative and commutative.
class RepeatedNgramStats {
public:
    explicit RepeatedNgramStats(std::size_t n = 10) : n_(n) {}

    void add_document(std::string_view text) {
        const auto d = detail::decode(text);
        detail::for_each_repeated_window(d, n_, [&](std::size_t w) {
            ++counts_[std::string(text.substr(d.offsets[w], d.offsets[w + n_] - d.offsets[w]))];
        });
    }

    void merge(const RepeatedNgramStats& other) {
        if (other.n_ != n_) throw std::invalid_argument("merging n-gram stats of different lengths");
        for (const auto& [k, v] : other.counts_) counts_[k] += v;
    }

    [[nodiscard]] std::uint64_t count(const std::string& gram) const {
        auto it = counts_.find(gram);
        return it == counts_.end() ? 0 : it->second;
    }

    [[nodiscard]] std::size_t n() const noexcept { return n_; }
    [[nodiscard]] const std::map<std::string, std::uint64_t>& counts() const noexcept { return counts_; }

    /// Grams whose count strictly exceeds `min_count`.
    [[nodiscard]] std::unordered_set<std::string> frequent(std::uint64_t min_count) const {
        std::unordered_set<std::string> out;
        for (const auto& [k, v] : counts_) {
            if (v > min_count) out.insert(k);
        }
        return out;
    }

private:
    std::size_t n_;
    std::map<std::string, std::uint64_t> counts_;
};

/// Deletes every span covered by a frequent window. A deleted span that held a
/// newline becomes "\n", one that held other whitespace becomes " ".
inline std::string remove_repeated_ngrams(std::string_view text, std::size_t n,
                                          const std::unordered_set<std::string>& frequent) {
    if (frequent.empty()) return std::string(text);
    const auto d = detail::decode(text);
    std::vector<bool> covered(d.cps.size(), false);
    bool any = false;
    detail::for_each_repeated_window(d, n, [&](std::size_t w) {
        const std::string gram(text.substr(d.offsets[w], d.offsets[w + n] - d.offsets[w]));
        if (frequent.count(gram)) {
            for (std::size_t k = w; k < w + n; ++k) covered[k] = true;
            any = true;
        }
    });
    if (!any) return std::string(text);
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < d.cps.size()) {
        if (!covered[i]) {
            out.append(text.substr(d.offsets[i], d.offsets[i + 1] - d.offsets[i]));
            ++i;
            continue;
        }
        bool newline = false, space = false;
        while (i < d.cps.size() && covered[i]) {
            newline |= d.cps[i] == '\n';
            space |= detail::is_space_cp(d.cps[i]);
            ++i;
        }
        if (newline) out.push_back('\n');
        else if (space) out.push_back(' ');
    }
    return out;
}

/// Frequent-gram set shared by all documents of a snapshot, built once after
/// the counting barrier.
struct NgramFilter {
    std::size_t n = 10;
    std::unordered_set<std::string> frequent;

    static NgramFilter from_stats(const RepeatedNgramStats& stats, std::uint64_t min_count) {
        return NgramFilter{stats.n(), stats.frequent(min_count)};
    }
};

struct FilterOutcome {
    CleanDocument doc;
    [[nodiscard]] bool emitted() const noexcept { return !doc.rejected.has_value(); }
};

/// Removal rules in order, then frequent repeated n-grams, then reject rules
/// against the final text (so emitted text never matches a reject rule).
inline FilterOutcome apply_rule_filters(CleanDocument doc, const RuleSet& rules, const NgramFilter& ngrams) {
    std::string text = std::move(doc.text);
    for (const auto& r : rules.rules()) {
        if (r.action != RuleAction::Remove) continue;
        text = boost::regex_replace(text, *r.compiled, "", boost::regex_constants::format_literal);
    }
    text = remove_repeated_ngrams(text, ngrams.n, ngrams.frequent);
    doc.text = std::move(text);
    doc.record_step(Step::RuleFilter);
    for (const auto& r : rules.rules()) {
        if (r.action != RuleAction::Reject) continue;
        if (boost::regex_search(doc.text, *r.compiled)) {
            doc.reject(r.name, "matched reject rule");
            break;
        }
    }
    return FilterOutcome{std::move(doc)};
}

inline FilterOutcome apply_rule_filters(CleanDocument doc, const RuleSet& rules, const RepeatedNgramStats& stats) {
    return apply_rule_filters(std::move(doc), rules, NgramFilter::from_stats(stats, rules.repeated_ngram_min_count));
}

}  // namespace lexcorpus
