#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lexcorpus/errors.hpp"
#include "lexcorpus/utf8.hpp"

namespace lexcorpus {

using json = nlohmann::json;
using Metadata = std::map<std::string, std::string>;

/// A unit of corpus text as it arrives from a source.
struct RawDocument {
    std::string id;
    std::string source;
    std::string text;
    Metadata metadata;
    /// Number of malformed UTF-8 sequences replaced while reading. Not serialized.
    std::size_t utf8_replacements = 0;

    [[nodiscard]] std::size_t byte_len() const noexcept { return text.size(); }

    friend bool operator==(const RawDocument& a, const RawDocument& b) {
        return a.id == b.id && a.source == b.source && a.text == b.text && a.metadata == b.metadata;
    }
};

/// Processing stages in their mandatory order.
enum class Step { Ingest, Normalize, RuleFilter, Perplexity, Dedup };

inline std::string_view to_string(Step s) {
    switch (s) {
        case Step::Ingest: return "ingest";
        case Step::Normalize: return "normalize";
        case Step::RuleFilter: return "rule-filter";
        case Step::Perplexity: return "perplexity";
        case Step::Dedup: return "dedup";
    }
    return "?";
}

inline Step step_from_string(std::string_view s) {
    for (Step st : {Step::Ingest, Step::Normalize, Step::RuleFilter, Step::Perplexity, Step::Dedup}) {
        if (to_string(st) == s) return st;
    }
    throw FormatError("unknown processing step '" + std::string(s) + "'");
}

struct Rejection {
    std::string reason;
    std::string detail;

    friend bool operator==(const Rejection&, const Rejection&) = default;
};

/// A document carried through the cleaning stages.
struct CleanDocument {
    std::string id;
    std::string source;
    std::string text;
    Metadata metadata;
    std::vector<Step> applied_steps;
    std::optional<double> normalized_perplexity;
    std::optional<Rejection> rejected;

    static CleanDocument from_raw(const RawDocument& raw) {
        return CleanDocument{raw.id, raw.source, raw.text, raw.metadata, {}, std::nullopt, std::nullopt};
    }

    /// Appends a step; steps must be strictly increasing.
    void record_step(Step s) {
        if (!applied_steps.empty() && applied_steps.back() >= s) {
            throw std::logic_error("step '" + std::string(to_string(s)) + "' applied out of order on " + id);
        }
        applied_steps.push_back(s);
    }

    void reject(std::string reason, std::string detail = {}) {
        rejected = Rejection{std::move(reason), std::move(detail)};
    }

    friend bool operator==(const CleanDocument&, const CleanDocument&) = default;
};

enum class SourceKind { Legal, Replay, Math, Instruction, Annealing };

inline std::string_view to_string(SourceKind k) {
    switch (k) {
        case SourceKind::Legal: return "legal";
        case SourceKind::Replay: return "replay";
        case SourceKind::Math: return "math";
        case SourceKind::Instruction: return "instruction";
        case SourceKind::Annealing: return "annealing";
    }
    return "?";
}

inline SourceKind source_kind_from_string(std::string_view s) {
    for (SourceKind k : {SourceKind::Legal, SourceKind::Replay, SourceKind::Math, SourceKind::Instruction,
                         SourceKind::Annealing}) {
        if (to_string(k) == s) return k;
    }
    throw ConfigError("unknown source kind '" + std::string(s) + "'");
}

/// A named source with a token budget. At desk scale the budget is a relative
/// weight; only proportions matter.
struct SourceSpec {
    std::string name;
    double token_budget = 0.0;
    SourceKind kind = SourceKind::Legal;
};

// ---------------------------------------------------------------------------
// Canonical order

inline bool canonical_less(std::string_view source_a, std::string_view id_a, std::string_view source_b,
                           std::string_view id_b) {
    if (source_a != source_b) return source_a < source_b;
    return id_a < id_b;
}

template <typename Doc>
void sort_canonical(std::vector<Doc>& docs) {
    std::stable_sort(docs.begin(), docs.end(), [](const Doc& a, const Doc& b) {
        return canonical_less(a.source, a.id, b.source, b.id);
    });
}

// ---------------------------------------------------------------------------
// JSON mapping

inline json to_json(const RawDocument& d) {
    return json{{"id", d.id}, {"source", d.source}, {"text", d.text}, {"metadata", d.metadata}};
}

inline json to_json(const CleanDocument& d) {
    json j{{"id", d.id}, {"source", d.source}, {"text", d.text}, {"metadata", d.metadata}};
    json steps = json::array();
    for (Step s : d.applied_steps) steps.push_back(std::string(to_string(s)));
    j["applied_steps"] = std::move(steps);
    if (d.normalized_perplexity) j["normalized_perplexity"] = *d.normalized_perplexity;
    if (d.rejected) j["rejected"] = json{{"reason", d.rejected->reason}, {"detail", d.rejected->detail}};
    return j;
}

namespace detail {

inline std::string require_string(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw FormatError(std::string("missing string field '") + key + "'");
    return it->get<std::string>();
}

inline Metadata read_metadata(const json& j) {
    Metadata m;
    auto it = j.find("metadata");
    if (it == j.end() || it->is_null()) return m;
    if (!it->is_object()) throw FormatError("metadata must be an object");
    for (const auto& [k, v] : it->items()) m[k] = v.is_string() ? v.get<std::string>() : v.dump();
    return m;
}

}  // namespace detail

inline RawDocument raw_document_from_json(const json& j) {
    RawDocument d;
    d.id = detail::require_string(j, "id");
    d.source = detail::require_string(j, "source");
    d.text = detail::require_string(j, "text");
    d.metadata = detail::read_metadata(j);
    return d;
}

inline CleanDocument clean_document_from_json(const json& j) {
    CleanDocument d;
    d.id = detail::require_string(j, "id");
    d.source = detail::require_string(j, "source");
    d.text = j.contains("text") ? detail::require_string(j, "text") : std::string{};
    d.metadata = detail::read_metadata(j);
    if (auto it = j.find("applied_steps"); it != j.end()) {
        for (const auto& s : *it) d.applied_steps.push_back(step_from_string(s.get<std::string>()));
    }
    if (auto it = j.find("normalized_perplexity"); it != j.end() && it->is_number()) {
        d.normalized_perplexity = it->get<double>();
    }
    if (auto it = j.find("rejected"); it != j.end() && it->is_object()) {
        d.rejected = Rejection{it->value("reason", ""), it->value("detail", "")};
    }
    return d;
}

// ---------------------------------------------------------------------------
// Newline-delimited JSON I/O

/// Calls `fn(json, line_number)` for every non-blank line. Invalid UTF-8 is
/// replaced before parsing; the replacement count is passed along.
inline void for_each_jsonl(const std::string& path,
                           const std::function<void(const json&, std::size_t line, std::size_t replaced)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto clean = utf8::sanitize(line);
        json j;
        try {
            j = json::parse(clean.text);
        } catch (const json::parse_error& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        fn(j, lineno, clean.replacements);
    }
    if (in.bad()) throw IoError("read error on '" + path + "'");
}

inline std::vector<RawDocument> read_raw_documents(const std::string& path) {
    std::vector<RawDocument> docs;
    for_each_jsonl(path, [&](const json& j, std::size_t line, std::size_t replaced) {
        try {
            docs.push_back(raw_document_from_json(j));
        } catch (const FormatError& e) {
            throw FormatError(path + ":" + std::to_string(line) + ": " + e.what());
        }
        docs.back().utf8_replacements = replaced;
    });
    return docs;
}

inline std::vector<CleanDocument> read_clean_documents(const std::string& path) {
    std::vector<CleanDocument> docs;
    for_each_jsonl(path, [&](const json& j, std::size_t line, std::size_t) {
        try {
            docs.push_back(clean_document_from_json(j));
        } catch (const FormatError& e) {
            throw FormatError(path + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    return docs;
}

template <typename Range>
void write_jsonl(const std::string& path, const Range& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& r : records) out << to_json(r).dump() << '\n';
    if (!out) throw IoError("write error on '" + path + "'");
}

// ---------------------------------------------------------------------------
// Validation

enum class IssueKind { DuplicateId, EmptyDocument, InvalidUtf8 };

inline std::string_view to_string(IssueKind k) {
    switch (k) {
        case IssueKind::DuplicateId: return "duplicate-id";
        case IssueKind::EmptyDocument: return "empty-document";
        case IssueKind::InvalidUtf8: return "invalid-utf8";
    }
    return "?";
}

struct ValidationIssue {
    IssueKind kind;
    std::string id;
    std::size_t index = 0;  ///< position in the input stream
    std::size_t count = 1;  ///< replacement count for InvalidUtf8
};

struct ValidationReport {
    std::size_t documents = 0;
    std::size_t utf8_replacements = 0;
    std::vector<ValidationIssue> issues;

    [[nodiscard]] std::size_t count(IssueKind k) const {
        return static_cast<std::size_t>(
            std::count_if(issues.begin(), issues.end(), [k](const ValidationIssue& i) { return i.kind == k; }));
    }
    [[nodiscard]] bool ok() const noexcept { return issues.empty(); }
};

/// Inspects a document stream without modifying it. Only the second and later
/// occurrences of an id are reported as duplicates.
template <typename Range>
ValidationReport validate_corpus(const Range& docs) {
    ValidationReport report;
    std::unordered_map<std::string, std::size_t> seen;
    std::size_t index = 0;
    for (const RawDocument& d : docs) {
        if (!seen.emplace(d.id, index).second) {
            report.issues.push_back({IssueKind::DuplicateId, d.id, index, 1});
        }
        if (d.text.find_first_not_of(" \t\r\n\f\v") == std::string::npos) {
            report.issues.push_back({IssueKind::EmptyDocument, d.id, index, 1});
        }
        if (d.utf8_replacements > 0) {
            report.issues.push_back({IssueKind::InvalidUtf8, d.id, index, d.utf8_replacements});
            report.utf8_replacements += d.utf8_replacements;
        }
        ++index;
    }
    report.documents = index;
    return report;
}

inline json to_json(const ValidationReport& r) {
    json issues = json::array();
    for (const auto& i : r.issues) {
        issues.push_back({{"kind", std::string(to_string(i.kind))}, {"id", i.id}, {"index", i.index}, {"count", i.count}});
    }
    return json{{"documents", r.documents}, {"utf8_replacements", r.utf8_replacements}, {"issues", issues}};
}

}  // namespace lexcorpus
