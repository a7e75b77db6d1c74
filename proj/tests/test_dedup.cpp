#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "lexcorpus/dedup.hpp"
#include "test_util.hpp"

using namespace lexcorpus;

namespace {

std::set<std::string> word_shingles(const std::string& text, std::size_t k) {
    std::vector<std::string> words;
    std::istringstream in(text);
    for (std::string w; in >> w;) {
        for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        words.push_back(w);
    }
    std::set<std::string> out;
    if (words.size() < k) {
        std::string s;
        for (const auto& w : words) s += w + ' ';
        out.insert(s);
        return out;
    }
    for (std::size_t i = 0; i + k <= words.size(); ++i) {
        std::string s;
        for (std::size_t j = i; j < i + k; ++j) s += words[j] + ' ';
        out.insert(s);
    }
    return out;
}

double oracle_jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    std::size_t inter = 0;
    for (const auto& s : a) inter += b.count(s);
    return double(inter) / double(a.size() + b.size() - inter);
}

CleanDocument make(std::string id, std::string text, std::string source = "s") {
    CleanDocument d;
    d.id = std::move(id);
    d.source = std::move(source);
    d.text = std::move(text);
    return d;
}

std::string mutate(SplitMix64& rng, const std::string& text, double rate) {
    std::istringstream in(text);
    std::string out;
    for (std::string w; in >> w;) {
        if (!out.empty()) out += ' ';
        out += rng.uniform() < rate ? "m" + std::to_string(rng.below(1000000)) : w;
    }
    return out;
}

}  // namespace

TEST(Shingle, MatchesStringShingleCount) {
    SplitMix64 rng(1);
    for (int i = 0; i < 50; ++i) {
        const auto text = testutil::random_words(rng, 1 + rng.below(60), 20);
        EXPECT_EQ(shingle(text, 5).size(), word_shingles(text, 5).size());
    }
    EXPECT_EQ(shingle("The COURT held", 2), shingle("the court  held", 2));
    EXPECT_THROW(shingle("x", 0), std::invalid_argument);
}

TEST(Shingle, ExactJaccardAgreesWithOracle) {
    SplitMix64 rng(2);
    for (int i = 0; i < 100; ++i) {
        const auto a = testutil::random_words(rng, 30, 15);
        const auto b = rng.below(2) ? mutate(rng, a, 0.1) : testutil::random_words(rng, 30, 15);
        EXPECT_NEAR(exact_jaccard(shingle(a, 3), shingle(b, 3)), oracle_jaccard(word_shingles(a, 3), word_shingles(b, 3)),
                    1e-12);
    }
}

TEST(MinHash, EstimateTracksExactJaccard) {
    SplitMix64 rng(3);
    const DedupConfig cfg;
    const auto seeds = permutation_seeds(cfg);
    double abs_err = 0.0;
    const int pairs = 300;
    for (int i = 0; i < pairs; ++i) {
        const auto a = testutil::random_words(rng, 80, 5000);
        const auto b = mutate(rng, a, rng.uniform() * 0.5);
        const auto sa = shingle(a, cfg.shingle_len), sb = shingle(b, cfg.shingle_len);
        abs_err += std::abs(estimate_jaccard(minhash_signature(sa, seeds), minhash_signature(sb, seeds)) - exact_jaccard(sa, sb));
    }
    EXPECT_LT(abs_err / pairs, 0.05);
}

TEST(MinHash, SignatureDependsOnSeed) {
    DedupConfig a, b;
    b.seed = 99;
    const auto s = shingle("the court held that the statute applies here", 5);
    EXPECT_EQ(minhash_signature(s, a).values, minhash_signature(s, a).values);
    EXPECT_NE(minhash_signature(s, a).values, minhash_signature(s, b).values);
}

TEST(DedupConfig, Validation) {
    DedupConfig c;
    c.bands = 16;
    EXPECT_THROW(c.validate(), ConfigError);
    c.rows = 8;
    EXPECT_NO_THROW(c.validate());
    EXPECT_THROW(dedup_config_from_json(nlohmann::json::parse(R"({"similarity_threshold": 1.0})")), ConfigError);
    EXPECT_THROW(dedup_config_from_json(nlohmann::json::parse(R"({"band": 4})")), ConfigError);
    EXPECT_EQ(dedup_config_from_json(nlohmann::json::parse(R"({"scope": "per-source"})")).scope, DedupScope::PerSource);
    EXPECT_NEAR(DedupConfig{}.lsh_threshold(), std::pow(1.0 / 32.0, 0.25), 1e-12);
}

TEST(UnionFind, RootIsSmallestIndex) {
    MinRootUnionFind uf(6);
    uf.unite(5, 3);
    uf.unite(4, 5);
    uf.unite(2, 4);
    EXPECT_EQ(uf.find(5), 2u);
    EXPECT_EQ(uf.find(3), 2u);
    EXPECT_EQ(uf.find(0), 0u);
}

TEST(ExactDedup, KeepsCanonicalFirst) {
    const auto out = exact_dedup({make("b", "same text"), make("a", "same text"), make("c", "other")});
    ASSERT_EQ(out.kept.size(), 2u);
    EXPECT_EQ(out.kept[0].id, "a");
    ASSERT_EQ(out.rejected.size(), 1u);
    EXPECT_EQ(out.rejected[0].id, "b");
    EXPECT_EQ(out.rejected[0].rejected->reason, "exact-dup");
    EXPECT_EQ(out.rejected[0].rejected->detail, "a");
}

TEST(ExactDedup, NfkcEquivalentTextsCollide) {
    const auto out = exact_dedup({make("a", "\xEF\xAC\x81le"), make("b", "file")});
    EXPECT_EQ(out.kept.size(), 1u);
}

TEST(ExactDedup, PerSourceScope) {
    const auto out = exact_dedup({make("a", "same", "x"), make("b", "same", "y")}, DedupScope::PerSource);
    EXPECT_EQ(out.kept.size(), 2u);
}

TEST(NearDedup, MatchesBruteForceOracleOnPlantedClusters) {
    SplitMix64 rng(10);
    std::vector<CleanDocument> docs;
    for (int base = 0; base < 60; ++base) {
        const auto text = testutil::random_words(rng, 120, 20000);
        docs.push_back(make("d" + std::to_string(docs.size()), text));
        for (std::uint64_t v = 0, n = rng.below(3); v < n; ++v) {
            docs.push_back(make("d" + std::to_string(docs.size()), mutate(rng, text, 0.02)));
        }
    }
    const DedupConfig cfg;
    const auto out = near_dedup(docs, cfg);

    // Oracle: threshold the exact Jaccard of every pair, take components,
    // keep the canonically smallest member.
    auto sorted = docs;
    sort_canonical(sorted);
    const std::size_t n = sorted.size();
    std::vector<std::set<std::string>> sh;
    for (const auto& d : sorted) sh.push_back(word_shingles(d.text, cfg.shingle_len));
    std::vector<std::size_t> comp(n);
    std::iota(comp.begin(), comp.end(), 0);
    std::function<std::size_t(std::size_t)> root = [&](std::size_t x) { return comp[x] == x ? x : root(comp[x]); };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (oracle_jaccard(sh[i], sh[j]) >= cfg.similarity_threshold) {
                const auto a = root(i), b = root(j);
                comp[std::max(a, b)] = std::min(a, b);
            }
        }
    }
    std::vector<std::string> expected;
    for (std::size_t i = 0; i < n; ++i) {
        if (root(i) == i) expected.push_back(sorted[i].id);
    }
    std::vector<std::string> got;
    for (const auto& d : out.kept) got.push_back(d.id);
    EXPECT_EQ(got, expected);
    EXPECT_LT(expected.size(), n);
    for (const auto& r : out.rejected) EXPECT_EQ(r.rejected->reason, "near-dup");
}

TEST(NearDedup, DeterministicAcrossWorkersAndInputOrder) {
    SplitMix64 rng(12);
    std::vector<CleanDocument> docs;
    for (int i = 0; i < 80; ++i) {
        const auto t = testutil::random_words(rng, 40, 300);
        docs.push_back(make("x" + std::to_string(i), t));
        docs.push_back(make("y" + std::to_string(i), mutate(rng, t, 0.05)));
    }
    const auto a = near_dedup(docs, DedupConfig{}, 1);
    std::reverse(docs.begin(), docs.end());
    const auto b = near_dedup(docs, DedupConfig{}, 4);
    EXPECT_EQ(format_cluster_report(a.clusters), format_cluster_report(b.clusters));
    ASSERT_EQ(a.kept.size(), b.kept.size());
    for (std::size_t i = 0; i < a.kept.size(); ++i) EXPECT_EQ(a.kept[i].id, b.kept[i].id);
}

TEST(NearDedup, PerSourceNeverMergesAcrossSources) {
    const std::string t = "the court of appeals affirmed the judgment of the district court below";
    DedupConfig cfg;
    cfg.scope = DedupScope::PerSource;
    EXPECT_EQ(near_dedup({make("a", t, "x"), make("b", t, "y")}, cfg).kept.size(), 2u);
    cfg.scope = DedupScope::Global;
    EXPECT_EQ(near_dedup({make("a", t, "x"), make("b", t, "y")}, cfg).kept.size(), 1u);
}

TEST(Dedup, ClusterReportFormat) {
    const auto out = dedup_documents({make("b", "same"), make("a", "same")}, DedupConfig{});
    EXPECT_EQ(format_cluster_report(out.clusters), "a\tb\t1.000000\n");
    EXPECT_EQ(out.kept[0].applied_steps, std::vector<Step>{Step::Dedup});
}
