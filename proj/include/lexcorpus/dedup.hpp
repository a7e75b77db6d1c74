#pragma once

#include <unicode/uchar.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "lexcorpus/corpus.hpp"
#include "lexcorpus/errors.hpp"
#include "lexcorpus/hash.hpp"
#include "lexcorpus/normalize.hpp"
#include "lexcorpus/parallel.hpp"
#include "lexcorpus/utf8.hpp"

namespace lexcorpus {

enum class DedupScope { Global, PerSource };

struct DedupConfig {
    std::size_t shingle_len = 5;
    std::size_t num_permutations = 128;
    double similarity_threshold = 0.5;
    // 32 x 4 puts the banding S-curve midpoint near 0.42, below the 0.5 cut.
    std::size_t bands = 32;
    std::size_t rows = 4;
    std::uint64_t seed = 0x5eed;
    DedupScope scope = DedupScope::Global;

    void validate() const {
        if (shingle_len < 1) throw ConfigError("shingle_len must be >= 1");
        if (num_permutations < 1) throw ConfigError("num_permutations must be >= 1");
        if (!(similarity_threshold > 0.0 && similarity_threshold < 1.0)) {
            throw ConfigError("similarity_threshold must lie in (0, 1)");
        }
        if (bands * rows != num_permutations) {
            throw ConfigError("bands * rows must equal num_permutations (" + std::to_string(bands) + " * " +
                              std::to_string(rows) + " != " + std::to_string(num_permutations) + ")");
        }
    }

    /// Similarity at which a pair has a 50% chance of sharing a band, approx (1/b)^(1/r).
    [[nodiscard]] double lsh_threshold() const {
        return std::pow(1.0 / static_cast<double>(bands), 1.0 / static_cast<double>(rows));
    }
};

inline DedupConfig dedup_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> kKeys = {"shingle_len", "num_permutations", "similarity_threshold",
                                                "bands",       "rows",             "seed",
                                                "scope"};
    for (const auto& [k, v] : j.items()) {
        if (!kKeys.count(k)) throw ConfigError("unknown dedup key '" + k + "'");
    }
    DedupConfig c;
    c.shingle_len = j.value("shingle_len", c.shingle_len);
    c.num_permutations = j.value("num_permutations", c.num_permutations);
    c.similarity_threshold = j.value("similarity_threshold", c.similarity_threshold);
    c.bands = j.value("bands", c.bands);
    c.rows = j.value("rows", c.rows);
    c.seed = j.value("seed", c.seed);
    const auto scope = j.value("scope", std::string("global"));
    if (scope == "global") c.scope = DedupScope::Global;
    else if (scope == "per-source") c.scope = DedupScope::PerSource;
    else throw ConfigError("dedup scope must be global|per-source");
    c.validate();
    return c;
}

inline nlohmann::json to_json(const DedupConfig& c) {
    return {{"shingle_len", c.shingle_len}, {"num_permutations", c.num_permutations},
            {"similarity_threshold", c.similarity_threshold}, {"bands", c.bands}, {"rows", c.rows},
            {"seed", c.seed}, {"scope", c.scope == DedupScope::Global ? "global" : "per-source"}};
}

// ---------------------------------------------------------------------------
// Shingles

/// Lowercased whitespace-separated words.
inline std::vector<std::string> shingle_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    std::size_t pos = 0;
    char32_t cp = 0;
    while (utf8::next(text, pos, cp)) {
        if (u_isUWhiteSpace(static_cast<UChar32>(cp)) || cp == ' ' || cp == '\n' || cp == '\t' || cp == '\r') {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            utf8::append(cur, static_cast<char32_t>(u_tolower(static_cast<UChar32>(cp))));
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

using ShingleSet = std::vector<std::uint64_t>;  // sorted, unique

/// Hashed word k-grams. Texts with fewer than k words form a single shingle.
inline ShingleSet shingle(std::string_view text, std::size_t k) {
    if (k < 1) throw std::invalid_argument("shingle length must be >= 1");
    const auto words = shingle_words(text);
    ShingleSet out;
    auto hash_range = [&](std::size_t from, std::size_t to) {
        std::uint64_t h = 0x243f6a8885a308d3ULL;
        for (std::size_t i = from; i < to; ++i) h = mix64(h ^ hash64(words[i]));
        return h;
    };
    if (words.size() < k) {
        out.push_back(hash_range(0, words.size()));
        return out;
    }
    out.reserve(words.size() - k + 1);
    for (std::size_t i = 0; i + k <= words.size(); ++i) out.push_back(hash_range(i, i + k));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline double exact_jaccard(const ShingleSet& a, const ShingleSet& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0, i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++inter;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

// ---------------------------------------------------------------------------
// MinHash

struct MinHashSignature {
    std::string doc_id;
    std::vector<std::uint64_t> values;
};

/// Per-permutation seeds derived from the snapshot seed.
inline std::vector<std::uint64_t> permutation_seeds(const DedupConfig& config) {
    SplitMix64 rng(config.seed);
    std::vector<std::uint64_t> seeds(config.num_permutations);
    for (auto& s : seeds) s = rng.next();
    return seeds;
}

inline MinHashSignature minhash_signature(const ShingleSet& shingles, std::span<const std::uint64_t> seeds,
                                          std::string doc_id = {}) {
    MinHashSignature sig{std::move(doc_id), std::vector<std::uint64_t>(seeds.size(), UINT64_MAX)};
    for (std::uint64_t s : shingles) {
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            const std::uint64_t h = mix64(s ^ seeds[i]);
            if (h < sig.values[i]) sig.values[i] = h;
        }
    }
    return sig;
}

inline MinHashSignature minhash_signature(const ShingleSet& shingles, const DedupConfig& config, std::string doc_id = {}) {
    const auto seeds = permutation_seeds(config);
    return minhash_signature(shingles, seeds, std::move(doc_id));
}

/// Fraction of agreeing positions.
inline double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b) {
    if (a.values.size() != b.values.size() || a.values.empty()) {
        throw std::invalid_argument("signatures of different length");
    }
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) same += a.values[i] == b.values[i];
    return static_cast<double>(same) / static_cast<double>(a.values.size());
}

// ---------------------------------------------------------------------------
// Clustering

struct ClusterEntry {
    std::string representative_id;
    std::string member_id;
    double estimated_jaccard = 0.0;
};

/// Union-find whose root is always the smallest index in the set.
class MinRootUnionFind {
public:
    explicit MinRootUnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (b < a) std::swap(a, b);
        parent_[b] = a;
    }

private:
    std::vector<std::size_t> parent_;
};

struct NearDupIndex {
    std::vector<std::size_t> representative;  // per input position
    std::vector<MinHashSignature> signatures;
    std::size_t candidate_pairs = 0;
};

/// Core near-duplicate clustering over texts already in canonical order.
/// `groups` (optional, same length) confines matches to equal group keys.
inline NearDupIndex near_duplicate_clusters(std::span<const std::string_view> texts,
                                            std::span<const std::string_view> groups, const DedupConfig& config,
                                            unsigned workers = 1) {
    config.validate();
    const std::size_t n = texts.size();
    const auto seeds = permutation_seeds(config);
    NearDupIndex out;
    out.signatures.resize(n);
    parallel_for(n, workers, [&](std::size_t i) {
        out.signatures[i] = minhash_signature(shingle(texts[i], config.shingle_len), seeds);
    });

    // Band buckets; candidate pairs collected as (i, j) with i < j.
    std::vector<std::uint64_t> pairs;
    for (std::size_t b = 0; b < config.bands; ++b) {
        std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets;
        buckets.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t h = mix64(b + 1);
            for (std::size_t r = 0; r < config.rows; ++r) h = mix64(h ^ out.signatures[i].values[b * config.rows + r]);
            if (!groups.empty()) h = mix64(h ^ hash64(groups[i]));
            buckets[h].push_back(static_cast<std::uint32_t>(i));
        }
        for (const auto& [key, members] : buckets) {
            for (std::size_t x = 0; x < members.size(); ++x) {
                for (std::size_t y = x + 1; y < members.size(); ++y) {
                    pairs.push_back((static_cast<std::uint64_t>(members[x]) << 32) | members[y]);
                }
            }
        }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    out.candidate_pairs = pairs.size();

    MinRootUnionFind uf(n);
    for (std::uint64_t p : pairs) {
        const std::size_t i = p >> 32, j = p & 0xffffffffu;
        if (!groups.empty() && groups[i] != groups[j]) continue;
        if (estimate_jaccard(out.signatures[i], out.signatures[j]) >= config.similarity_threshold) uf.unite(i, j);
    }
    out.representative.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.representative[i] = uf.find(i);
    return out;
}

struct DedupPartition {
    std::vector<CleanDocument> kept;
    std::vector<CleanDocument> rejected;
    std::vector<ClusterEntry> clusters;
};

/// Keeps the first document (canonical order) of each group of documents with
/// identical NFKC-normalized text. Output is in canonical order.
inline DedupPartition exact_dedup(std::vector<CleanDocument> docs, DedupScope scope = DedupScope::Global) {
    sort_canonical(docs);
    DedupPartition out;
    std::unordered_map<std::string, std::string> first;  // content key -> kept id
    for (auto& d : docs) {
        std::string key = sha256_hex(normalize_nfkc(d.text));
        if (scope == DedupScope::PerSource) key += "|" + d.source;
        auto [it, inserted] = first.emplace(std::move(key), d.id);
        if (inserted) {
            out.kept.push_back(std::move(d));
        } else {
            out.clusters.push_back({it->second, d.id, 1.0});
            d.reject("exact-dup", it->second);
            out.rejected.push_back(std::move(d));
        }
    }
    return out;
}

/// MinHash/LSH near-duplicate removal. Each cluster keeps its canonical-order
/// first member; the rest are rejected with reason "near-dup" and the
/// representative's id as detail. Output is in canonical order.
inline DedupPartition near_dedup(std::vector<CleanDocument> docs, const DedupConfig& config, unsigned workers = 1) {
    sort_canonical(docs);
    std::vector<std::string_view> texts, groups;
    texts.reserve(docs.size());
    for (const auto& d : docs) texts.push_back(d.text);
    if (config.scope == DedupScope::PerSource) {
        for (const auto& d : docs) groups.push_back(d.source);
    }
    const auto index = near_duplicate_clusters(texts, groups, config, workers);
    DedupPartition out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const std::size_t rep = index.representative[i];
        if (rep == i) continue;
        out.clusters.push_back(
            {docs[rep].id, docs[i].id, estimate_jaccard(index.signatures[rep], index.signatures[i])});
    }
    std::vector<std::string> rep_ids(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) rep_ids[i] = docs[index.representative[i]].id;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (index.representative[i] == i) {
            out.kept.push_back(std::move(docs[i]));
        } else {
            docs[i].reject("near-dup", rep_ids[i]);
            out.rejected.push_back(std::move(docs[i]));
        }
    }
    return out;
}

/// Exact then near dedup; both record the Dedup step.
inline DedupPartition dedup_documents(std::vector<CleanDocument> docs, const DedupConfig& config, unsigned workers = 1) {
    for (auto& d : docs) d.record_step(Step::Dedup);
    auto exact = exact_dedup(std::move(docs), config.scope);
    auto near = near_dedup(std::move(exact.kept), config, workers);
    DedupPartition out;
    out.kept = std::move(near.kept);
    out.rejected = std::move(exact.rejected);
    for (auto& r : near.rejected) out.rejected.push_back(std::move(r));
    sort_canonical(out.rejected);
    out.clusters = std::move(exact.clusters);
    out.clusters.insert(out.clusters.end(), near.clusters.begin(), near.clusters.end());
    return out;
}

/// Tab-separated (representative_id, member_id, estimated_jaccard) lines.
inline std::string format_cluster_report(const std::vector<ClusterEntry>& clusters) {
    std::string out;
    char buf[32];
    for (const auto& c : clusters) {
        std::snprintf(buf, sizeof buf, "%.6f", c.estimated_jaccard);
        out += c.representative_id + '\t' + c.member_id + '\t' + buf + '\n';
    }
    return out;
}

}  // namespace lexcorpus
