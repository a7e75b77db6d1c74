#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexcorpus/corpus.hpp"
#include "lexcorpus/errors.hpp"
#include "lexcorpus/hash.hpp"
#include "lexcorpus/pack.hpp"
#include "lexcorpus/tokenizer.hpp"

namespace lexcorpus {

enum class MixPhase { Pretrain, Anneal };

/// Named sources with budgets plus the fixed fractions reserved for replay,
/// math and instruction data. Fractions are token-level.
struct MixRecipe {
    std::vector<SourceSpec> sources;
    double replay_fraction = 0.02;
    double math_fraction = 0.05;
    double instruction_fraction = 0.0;
    std::vector<std::string> instruction_sources;
    MixPhase phase = MixPhase::Pretrain;
    bool allow_repetition = false;

    [[nodiscard]] double legal_fraction() const { return 1.0 - replay_fraction - math_fraction - instruction_fraction; }

    [[nodiscard]] const SourceSpec* find(const std::string& name) const {
        for (const auto& s : sources) {
            if (s.name == name) return &s;
        }
        return nullptr;
    }

    void validate() const {
        std::set<std::string> names;
        for (const auto& s : sources) {
            if (!names.insert(s.name).second) throw ConfigError("duplicate source name '" + s.name + "' in recipe");
            if (!(s.token_budget > 0.0)) throw ConfigError("source '" + s.name + "' needs a positive token budget");
        }
        for (double f : {replay_fraction, math_fraction, instruction_fraction}) {
            if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("mix fractions must lie in [0, 1]");
        }
        for (const auto& n : instruction_sources) {
            const auto* s = find(n);
            if (!s || s->kind != SourceKind::Instruction) {
                throw ConfigError("instruction source '" + n + "' is not an instruction-kind source in the recipe");
            }
        }
        if (phase == MixPhase::Anneal) {
            if (!has_kind(SourceKind::Annealing)) throw ConfigError("anneal recipe has no annealing sources");
            return;
        }
        if (legal_fraction() < -1e-6) throw ConfigError("replay + math + instruction fractions exceed 1");
        auto need = [&](double f, SourceKind k) {
            if (f > 0.0 && !has_kind(k)) {
                throw ConfigError("recipe reserves " + std::to_string(f) + " for " + std::string(to_string(k)) +
                                  " data but lists no such source");
            }
        };
        need(replay_fraction, SourceKind::Replay);
        need(math_fraction, SourceKind::Math);
        need(instruction_fraction, SourceKind::Instruction);
        need(legal_fraction() > 1e-6 ? legal_fraction() : 0.0, SourceKind::Legal);
    }

    [[nodiscard]] bool has_kind(SourceKind k) const {
        return std::any_of(sources.begin(), sources.end(), [k](const SourceSpec& s) { return s.kind == k; });
    }
};

/// Legal sources of the continued-pretraining corpus, budgets in billions of
/// tokens, plus replay and math sources.
inline MixRecipe table1_recipe() {
    MixRecipe r;
    r.sources = {
        {"freelaw", 15, SourceKind::Legal},
        {"edgar", 5, SourceKind::Legal},
        {"multilegal-pile-en", 50, SourceKind::Legal},
        {"europarl-en", 6, SourceKind::Legal},
        {"govinfo", 11, SourceKind::Legal},
        {"law-stack-exchange", 0.019, SourceKind::Legal},
        {"open-australian-legal", 0.5, SourceKind::Legal},
        {"eu-legislation", 0.315, SourceKind::Legal},
        {"uk-legislation", 0.190, SourceKind::Legal},
        {"court-transcripts", 0.350, SourceKind::Legal},
        {"uspto", 4.7, SourceKind::Legal},
        {"web-legal", 400, SourceKind::Legal},
        {"other-legal", 30, SourceKind::Legal},
        {"replay-slimpajama", 1, SourceKind::Replay},
        {"math", 1, SourceKind::Math},
    };
    return r;
}

/// Annealing phase: commercial instruction data and generic chat, equal weight.
inline MixRecipe annealing_recipe() {
    MixRecipe r;
    r.phase = MixPhase::Anneal;
    r.replay_fraction = 0.0;
    r.math_fraction = 0.0;
    r.sources = {{"lawinstruct-commercial", 1, SourceKind::Annealing}, {"ultrachat", 1, SourceKind::Annealing}};
    return r;
}

inline MixRecipe mix_recipe_from_json(const nlohmann::json& j) {
    static const std::set<std::string> kKeys = {"sources",         "replay_fraction",     "math_fraction",
                                                "instruction_fraction", "instruction_sources", "phase",
                                                "allow_repetition"};
    for (const auto& [k, v] : j.items()) {
        if (!kKeys.count(k)) throw ConfigError("unknown recipe key '" + k + "'");
    }
    MixRecipe r;
    r.replay_fraction = j.value("replay_fraction", r.replay_fraction);
    r.math_fraction = j.value("math_fraction", r.math_fraction);
    r.instruction_fraction = j.value("instruction_fraction", r.instruction_fraction);
    r.instruction_sources = j.value("instruction_sources", std::vector<std::string>{});
    r.allow_repetition = j.value("allow_repetition", false);
    const auto phase = j.value("phase", std::string("pretrain"));
    if (phase == "pretrain") r.phase = MixPhase::Pretrain;
    else if (phase == "anneal") r.phase = MixPhase::Anneal;
    else throw ConfigError("recipe phase must be pretrain|anneal");
    if (!j.contains("sources") || !j.at("sources").is_array()) throw ConfigError("recipe needs a sources array");
    for (const auto& s : j.at("sources")) {
        if (!s.contains("name") || !s.contains("budget")) throw ConfigError("recipe source needs name and budget");
        r.sources.push_back({s.at("name").get<std::string>(), s.at("budget").get<double>(),
                             source_kind_from_string(s.value("kind", std::string("legal")))});
    }
    r.validate();
    return r;
}

inline nlohmann::json to_json(const MixRecipe& r) {
    nlohmann::json sources = nlohmann::json::array();
    for (const auto& s : r.sources) {
        sources.push_back({{"name", s.name}, {"budget", s.token_budget}, {"kind", std::string(to_string(s.kind))}});
    }
    return {{"sources", sources},
            {"replay_fraction", r.replay_fraction},
            {"math_fraction", r.math_fraction},
            {"instruction_fraction", r.instruction_fraction},
            {"instruction_sources", r.instruction_sources},
            {"phase", r.phase == MixPhase::Pretrain ? "pretrain" : "anneal"},
            {"allow_repetition", r.allow_repetition}};
}

struct SourceQuota {
    std::string name;
    SourceKind kind = SourceKind::Legal;
    double proportion = 0.0;
    std::uint64_t tokens = 0;
};

struct SamplingPlan {
    MixPhase phase = MixPhase::Pretrain;
    std::uint64_t total_tokens = 0;
    bool allow_repetition = false;
    std::vector<SourceQuota> quotas;  // recipe order

    [[nodiscard]] const SourceQuota* find(const std::string& name) const {
        for (const auto& q : quotas) {
            if (q.name == name) return &q;
        }
        return nullptr;
    }
};

/// Per-source target proportions. Within each kind, sources split that kind's
/// fraction in proportion to their budgets.
inline std::vector<SourceQuota> target_proportions(const MixRecipe& recipe) {
    recipe.validate();
    std::map<SourceKind, double> fraction;
    if (recipe.phase == MixPhase::Anneal) {
        fraction[SourceKind::Annealing] = 1.0;
    } else {
        fraction[SourceKind::Legal] = std::max(0.0, recipe.legal_fraction());
        fraction[SourceKind::Replay] = recipe.replay_fraction;
        fraction[SourceKind::Math] = recipe.math_fraction;
        fraction[SourceKind::Instruction] = recipe.instruction_fraction;
    }
    auto in_kind = [&](const SourceSpec& s) {
        if (s.kind != SourceKind::Instruction || recipe.instruction_sources.empty()) return true;
        return std::find(recipe.instruction_sources.begin(), recipe.instruction_sources.end(), s.name) !=
               recipe.instruction_sources.end();
    };
    std::map<SourceKind, double> kind_budget;
    for (const auto& s : recipe.sources) {
        if (in_kind(s)) kind_budget[s.kind] += s.token_budget;
    }
    std::vector<SourceQuota> out;
    for (const auto& s : recipe.sources) {
        const auto f = fraction.find(s.kind);
        if (f == fraction.end() || f->second <= 0.0 || !in_kind(s)) continue;
        out.push_back({s.name, s.kind, f->second * s.token_budget / kind_budget[s.kind], 0});
    }
    return out;
}

/// Integer quotas summing exactly to `total_tokens` (largest remainder).
/// `available` (tokens per source), when given, is checked unless the recipe
/// allows repetition.
inline SamplingPlan build_sampling_plan(const MixRecipe& recipe, std::uint64_t total_tokens,
                                        const std::map<std::string, std::uint64_t>* available = nullptr) {
    SamplingPlan plan;
    plan.phase = recipe.phase;
    plan.total_tokens = total_tokens;
    plan.allow_repetition = recipe.allow_repetition;
    plan.quotas = target_proportions(recipe);

    std::vector<std::pair<double, std::size_t>> remainders;
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < plan.quotas.size(); ++i) {
        const double exact = plan.quotas[i].proportion * static_cast<double>(total_tokens);
        // Snap values within rounding noise of an integer before flooring.
        const double nearest = std::round(exact);
        const double base = std::abs(exact - nearest) < 1e-6 ? nearest : std::floor(exact);
        plan.quotas[i].tokens = static_cast<std::uint64_t>(base);
        assigned += plan.quotas[i].tokens;
        remainders.emplace_back(exact - base, i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < total_tokens && k < remainders.size(); ++k, ++assigned) {
        ++plan.quotas[remainders[k].second].tokens;
    }

    if (available) {
        for (const auto& q : plan.quotas) {
            if (q.tokens == 0) continue;
            auto it = available->find(q.name);
            const std::uint64_t have = it == available->end() ? 0 : it->second;
            if (have == 0) throw PlanningError("source '" + q.name + "' has no data but a quota of " + std::to_string(q.tokens));
            if (have < q.tokens && !recipe.allow_repetition) {
                throw PlanningError("source '" + q.name + "' has " + std::to_string(have) + " tokens, plan needs " +
                                    std::to_string(q.tokens) + " (enable allow_repetition to reuse data)");
            }
        }
    }
    return plan;
}

inline nlohmann::json to_json(const SamplingPlan& p) {
    nlohmann::json q = nlohmann::json::array();
    for (const auto& s : p.quotas) {
        q.push_back({{"name", s.name}, {"kind", std::string(to_string(s.kind))}, {"proportion", s.proportion},
                     {"tokens", s.tokens}});
    }
    return {{"phase", p.phase == MixPhase::Pretrain ? "pretrain" : "anneal"}, {"total_tokens", p.total_tokens},
            {"allow_repetition", p.allow_repetition}, {"quotas", q}};
}

struct MixResult {
    std::vector<PackedExample> examples;
    std::map<std::string, std::uint64_t> realized_tokens;  // per source, excluding separators/pads

    [[nodiscard]] std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& [k, v] : realized_tokens) t += v;
        return t;
    }
};

namespace detail {

template <typename T>
void shuffle_indices(std::vector<T>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace detail

/// Draws documents source by source, choosing the next source with
/// probability proportional to its remaining quota. Each source's documents
/// are visited in a seeded shuffled order; the final draw from a source is
/// truncated to its remaining quota, so every quota is met exactly.
inline MixResult sample_mix(const SamplingPlan& plan, const std::map<std::string, std::vector<TokenSequence>>& shards,
                            std::uint64_t seed, const Tokenizer& tok, std::size_t seq_len = kDefaultSeqLen) {
    struct Cursor {
        const SourceQuota* quota;
        const std::vector<TokenSequence>* docs;
        std::vector<std::size_t> order;
        std::size_t pos = 0;
        std::size_t offset = 0;  // within current document
        std::uint64_t remaining = 0;
        std::uint64_t epoch = 0;
    };
    SplitMix64 rng(seed);
    std::vector<Cursor> cursors;
    std::uint64_t remaining_total = 0;
    for (const auto& q : plan.quotas) {
        if (q.tokens == 0) continue;
        auto it = shards.find(q.name);
        if (it == shards.end()) throw PlanningError("no shard provided for source '" + q.name + "'");
        std::uint64_t have = 0;
        for (const auto& d : it->second) have += d.tokens.size();
        if (have == 0) throw PlanningError("source '" + q.name + "' has no tokens");
        Cursor c{&q, &it->second, {}, 0, 0, q.tokens, 0};
        c.order.resize(it->second.size());
        for (std::size_t i = 0; i < c.order.size(); ++i) c.order[i] = i;
        detail::shuffle_indices(c.order, rng);
        remaining_total += q.tokens;
        cursors.push_back(std::move(c));
    }

    MixResult result;
    Packer packer(seq_len, tok.separator_id(), tok.pad_id());
    while (remaining_total > 0) {
        std::uint64_t pick = rng.below(remaining_total);
        std::size_t s = 0;
        while (pick >= cursors[s].remaining) {
            pick -= cursors[s].remaining;
            ++s;
        }
        Cursor& c = cursors[s];
        // Advance to a document with tokens left.
        while (true) {
            if (c.pos == c.order.size()) {
                if (!plan.allow_repetition) {
                    throw StageError("source '" + c.quota->name + "' exhausted after " +
                                     std::to_string(c.quota->tokens - c.remaining) + " tokens; repetition disabled");
                }
                ++c.epoch;
                c.pos = 0;
                detail::shuffle_indices(c.order, rng);
            }
            if (c.offset < (*c.docs)[c.order[c.pos]].tokens.size()) break;
            ++c.pos;
            c.offset = 0;
        }
        const TokenSequence& doc = (*c.docs)[c.order[c.pos]];
        const std::size_t take = static_cast<std::size_t>(
            std::min<std::uint64_t>({doc.tokens.size() - c.offset, seq_len, c.remaining}));
        const std::span<const TokenId> chunk(doc.tokens.data() + c.offset, take);
        if (auto ex = packer.push(chunk, doc.doc_id, c.quota->name, c.offset)) result.examples.push_back(std::move(*ex));
        c.offset += take;
        c.remaining -= take;
        remaining_total -= take;
        result.realized_tokens[c.quota->name] += take;
    }
    if (auto ex = packer.flush()) result.examples.push_back(std::move(*ex));
    return result;
}

}  // namespace lexcorpus
