#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "lexcorpus/clients.hpp"
#include "lexcorpus/corpus.hpp"
#include "lexcorpus/dedup.hpp"
#include "lexcorpus/hash.hpp"
#include "lexcorpus/parallel.hpp"

namespace lexcorpus {

enum class Role { User, Assistant };

inline std::string_view to_string(Role r) { return r == Role::User ? "user" : "assistant"; }

struct Turn {
    Role role = Role::User;
    std::string text;

    friend bool operator==(const Turn&, const Turn&) = default;
};

struct InstructionRecord {
    std::string id;
    std::string origin;
    std::vector<Turn> turns;

    /// Empty when well-formed, otherwise why not.
    [[nodiscard]] std::string malformation() const {
        if (turns.empty()) return "no turns";
        for (std::size_t i = 0; i < turns.size(); ++i) {
            const Role expected = i % 2 == 0 ? Role::User : Role::Assistant;
            if (turns[i].role != expected) {
                return "turn " + std::to_string(i) + " should be " + std::string(to_string(expected));
            }
            if (turns[i].text.find_first_not_of(" \t\r\n") == std::string::npos) {
                return "turn " + std::to_string(i) + " is empty";
            }
        }
        return {};
    }
    [[nodiscard]] bool well_formed() const { return malformation().empty(); }

    /// Turn texts joined by newlines, used for near-duplicate detection.
    [[nodiscard]] std::string joined_text() const {
        std::string s;
        for (const auto& t : turns) {
            if (!s.empty()) s.push_back('\n');
            s += t.text;
        }
        return s;
    }

    [[nodiscard]] std::string content_hash() const {
        Sha256 h;
        for (const auto& t : turns) h.update_field(to_string(t.role)).update_field(t.text);
        return h.hex_digest();
    }

    friend bool operator==(const InstructionRecord&, const InstructionRecord&) = default;
};

inline nlohmann::json to_json(const InstructionRecord& r) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : r.turns) turns.push_back({{"role", std::string(to_string(t.role))}, {"text", t.text}});
    return {{"id", r.id}, {"origin", r.origin}, {"turns", turns}};
}

/// Parses a record. Schema problems throw FormatError; role-order problems
/// are left for malformation() so they can be counted.
inline InstructionRecord instruction_record_from_json(const nlohmann::json& j, const std::string& default_origin,
                                                      const std::string& default_id) {
    if (!j.is_object()) throw FormatError("record is not an object");
    InstructionRecord r;
    r.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : default_id;
    r.origin = j.contains("origin") && j["origin"].is_string() ? j["origin"].get<std::string>() : default_origin;
    auto it = j.find("turns");
    if (it == j.end() || !it->is_array()) throw FormatError("record has no turns array");
    for (const auto& t : *it) {
        if (!t.is_object() || !t.contains("role") || !t.contains("text") || !t["text"].is_string()) {
            throw FormatError("turn needs role and text");
        }
        const auto role = t["role"].get<std::string>();
        if (role != "user" && role != "assistant") throw FormatError("unknown role '" + role + "'");
        r.turns.push_back({role == "user" ? Role::User : Role::Assistant, t["text"].get<std::string>()});
    }
    return r;
}

// ---------------------------------------------------------------------------
// Curation

struct OriginRetention {
    std::size_t input = 0;
    std::size_t malformed = 0;
    std::size_t exact_duplicates = 0;
    std::size_t near_duplicates = 0;
    std::size_t kept = 0;
};

struct CurationResult {
    std::vector<InstructionRecord> records;  // canonical (origin, id) order
    std::map<std::string, OriginRetention> retention;
    std::map<std::string, std::string> file_errors;  // path -> error

    [[nodiscard]] std::size_t kept_total() const {
        std::size_t n = 0;
        for (const auto& [o, r] : retention) n += r.kept;
        return n;
    }
};

/// Drops malformed records, then exact duplicates, then near-duplicates of
/// the concatenated turn text. A file that fails to parse is reported and
/// skipped as a whole.
inline CurationResult curate_instructions(const std::vector<std::string>& paths, const DedupConfig& dedup,
                                          unsigned workers = 1) {
    CurationResult out;
    std::vector<InstructionRecord> records;
    for (const auto& path : paths) {
        const std::string origin = std::filesystem::path(path).stem().string();
        std::vector<InstructionRecord> file_records;
        std::map<std::string, std::size_t> file_malformed;
        try {
            for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line, std::size_t) {
                InstructionRecord r;
                try {
                    r = instruction_record_from_json(j, origin, origin + ":" + std::to_string(line));
                } catch (const FormatError&) {
                    const std::string o = j.is_object() && j.contains("origin") && j["origin"].is_string()
                                              ? j["origin"].get<std::string>()
                                              : origin;
                    ++file_malformed[o];
                    return;
                }
                file_records.push_back(std::move(r));
            });
        } catch (const std::exception& e) {
            out.file_errors[path] = e.what();
            continue;
        }
        for (const auto& [o, n] : file_malformed) {
            out.retention[o].input += n;
            out.retention[o].malformed += n;
        }
        for (auto& r : file_records) {
            auto& ret = out.retention[r.origin];
            ++ret.input;
            if (!r.well_formed()) {
                ++ret.malformed;
                continue;
            }
            records.push_back(std::move(r));
        }
    }

    std::stable_sort(records.begin(), records.end(), [](const InstructionRecord& a, const InstructionRecord& b) {
        return canonical_less(a.origin, a.id, b.origin, b.id);
    });

    std::vector<InstructionRecord> unique;
    std::unordered_set<std::string> seen;
    for (auto& r : records) {
        if (!seen.insert(r.content_hash()).second) {
            ++out.retention[r.origin].exact_duplicates;
            continue;
        }
        unique.push_back(std::move(r));
    }

    std::vector<std::string> joined;
    joined.reserve(unique.size());
    for (const auto& r : unique) joined.push_back(r.joined_text());
    std::vector<std::string_view> views(joined.begin(), joined.end());
    const auto index = near_duplicate_clusters(views, {}, dedup, workers);
    for (std::size_t i = 0; i < unique.size(); ++i) {
        if (index.representative[i] != i) {
            ++out.retention[unique[i].origin].near_duplicates;
            continue;
        }
        ++out.retention[unique[i].origin].kept;
        out.records.push_back(std::move(unique[i]));
    }
    return out;
}

inline nlohmann::json to_json(const CurationResult& c) {
    nlohmann::json ret = nlohmann::json::object();
    for (const auto& [o, r] : c.retention) {
        ret[o] = {{"input", r.input}, {"malformed", r.malformed}, {"exact_duplicates", r.exact_duplicates},
                  {"near_duplicates", r.near_duplicates}, {"kept", r.kept}};
    }
    return {{"kept", c.records.size()}, {"retention", ret}, {"file_errors", c.file_errors}};
}

// ---------------------------------------------------------------------------
// Synthetic legal dialogues

/// Step names sent as ClientRequest::task.
namespace dialogue_task {
inline constexpr const char* kUserInquiry = "user-inquiry";
inline constexpr const char* kAssistantReformulation = "assistant-reformulation";
inline constexpr const char* kUserReasoningRequest = "user-reasoning-request";
inline constexpr const char* kAssistantAnalysis = "assistant-analysis";
inline constexpr const char* kUserFollowUp = "user-follow-up";
}  // namespace dialogue_task

/// Deterministic templates for offline generation and tests.
inline TemplateClient stub_dialogue_generator() {
    return TemplateClient({
        {dialogue_task::kUserInquiry, "What does this document establish? It begins: \"{excerpt}\""},
        {dialogue_task::kAssistantReformulation,
         "You are asking about a {document_type} issued on {issue_date}. In other words: what does this "
         "{document_type} establish, and what follows from it?"},
        {dialogue_task::kUserReasoningRequest, "Can you explain the reasoning behind that reading?"},
        {dialogue_task::kAssistantAnalysis,
         "Step {turn}: the {document_type} of {issue_date} is read against its text, \"{excerpt}\", and the "
         "question \"{last_user}\"."},
        {dialogue_task::kUserFollowUp, "How would that reasoning apply if the facts in step {previous} changed?"},
    });
}

namespace detail {

inline std::string excerpt(std::string_view text, std::size_t max_bytes = 240) {
    std::string s(text.substr(0, std::min(max_bytes, text.size())));
    // Do not cut inside a UTF-8 sequence.
    while (!s.empty() && (static_cast<unsigned char>(s.back()) & 0xC0) == 0x80) s.pop_back();
    if (!s.empty() && static_cast<unsigned char>(s.back()) >= 0xC0) s.pop_back();
    for (auto& c : s) {
        if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    }
    return s;
}

inline std::string dialogue_prompt(const std::string& task, const std::map<std::string, std::string>& v) {
    const auto get = [&](const char* k) {
        auto it = v.find(k);
        return it == v.end() ? std::string() : it->second;
    };
    if (task == dialogue_task::kUserInquiry) {
        return "Write a question that a user might ask about the following legal document.\n\n" + get("excerpt");
    }
    if (task == dialogue_task::kAssistantReformulation) {
        return "Reformulate the user's question as an assistant, integrating the document metadata (document type: " +
               get("document_type") + "; issue date: " + get("issue_date") + ").\n\nQuestion: " + get("last_user");
    }
    if (task == dialogue_task::kUserReasoningRequest) {
        return "As the user, ask the assistant to explain the reasoning behind its last answer:\n\n" +
               get("last_assistant");
    }
    if (task == dialogue_task::kAssistantAnalysis) {
        return "As the assistant, answer the user's question by unpacking the legal reasoning step by step.\n\n"
               "Document excerpt: " + get("excerpt") + "\n\nQuestion: " + get("last_user");
    }
    return "As the user, ask a more nuanced follow-up question about the reasoning so far:\n\n" + get("last_assistant");
}

}  // namespace detail

/// Builds a `depth`-turn dialogue about `doc`. The first three turns are a
/// user inquiry, an assistant reformulation carrying the document's type and
/// issue date, and a user request for the reasoning; later turns alternate
/// assistant analysis and user follow-ups. Generator failures propagate as
/// ClientError.
inline InstructionRecord synth_legal_dialogue(const CleanDocument& doc, int depth, TextClient& generator) {
    if (depth < 1) throw std::invalid_argument("dialogue depth must be >= 1");
    if (doc.metadata.empty()) throw std::invalid_argument("document '" + doc.id + "' has no metadata");
    std::map<std::string, std::string> vars = doc.metadata;
    if (!vars.count("document_type")) vars["document_type"] = "legal document";
    if (!vars.count("issue_date")) vars["issue_date"] = "an unknown date";
    vars["excerpt"] = detail::excerpt(doc.text);
    vars["doc_id"] = doc.id;

    InstructionRecord rec{"dialogue:" + doc.id, "synthetic-legal-dialogue", {}};
    for (int t = 0; t < depth; ++t) {
        const Role role = t % 2 == 0 ? Role::User : Role::Assistant;
        std::string task;
        if (t == 0) task = dialogue_task::kUserInquiry;
        else if (t == 1) task = dialogue_task::kAssistantReformulation;
        else if (t == 2) task = dialogue_task::kUserReasoningRequest;
        else task = role == Role::Assistant ? dialogue_task::kAssistantAnalysis : dialogue_task::kUserFollowUp;
        vars["turn"] = std::to_string(t + 1);
        vars["previous"] = std::to_string(t);
        ClientRequest req{task, "You generate realistic legal dialogues.", detail::dialogue_prompt(task, vars), vars};
        std::string text = generator.complete(req);
        if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ClientError("generator returned empty text for " + task);
        (role == Role::User ? vars["last_user"] : vars["last_assistant"]) = text;
        rec.turns.push_back({role, std::move(text)});
    }
    return rec;
}

struct SynthResult {
    std::vector<InstructionRecord> records;
    std::vector<std::pair<std::string, std::string>> skipped;  // (doc id, reason)
};

/// Generates dialogues for many documents with at most `max_in_flight`
/// concurrent generator calls; results keep input order. The generator must
/// be safe to call concurrently when max_in_flight > 1.
inline SynthResult synth_dialogues(const std::vector<CleanDocument>& docs, int depth, TextClient& generator,
                                   unsigned max_in_flight = 1) {
    std::vector<std::optional<InstructionRecord>> slots(docs.size());
    std::vector<std::string> errors(docs.size());
    parallel_for(docs.size(), max_in_flight, [&](std::size_t i) {
        try {
            slots[i] = synth_legal_dialogue(docs[i], depth, generator);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    SynthResult out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (slots[i]) out.records.push_back(std::move(*slots[i]));
        else out.skipped.emplace_back(docs[i].id, errors[i]);
    }
    return out;
}

}  // namespace lexcorpus
