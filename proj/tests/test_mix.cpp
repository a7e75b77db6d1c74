#include <gtest/gtest.h>

#include "lexcorpus/mix.hpp"
#include "test_util.hpp"

using namespace lexcorpus;

namespace {

std::map<std::string, std::vector<TokenSequence>> synthetic_shards(const MixRecipe& recipe, std::size_t docs_per_source,
                                                                   std::size_t max_len, std::uint64_t seed) {
    SplitMix64 rng(seed);
    const ByteTokenizer tok;
    std::map<std::string, std::vector<TokenSequence>> shards;
    for (const auto& s : recipe.sources) {
        for (std::size_t i = 0; i < docs_per_source; ++i) {
            std::string text(1 + rng.below(max_len), 'a');
            for (auto& c : text) c = static_cast<char>('a' + rng.below(26));
            shards[s.name].push_back(tokenize(tok, text, s.name + "-" + std::to_string(i), s.name));
        }
    }
    return shards;
}

MixRecipe small_recipe() {
    MixRecipe r;
    r.sources = {{"freelaw", 15, SourceKind::Legal},
                 {"edgar", 5, SourceKind::Legal},
                 {"replay", 1, SourceKind::Replay},
                 {"math", 1, SourceKind::Math}};
    return r;
}

}  // namespace

TEST(Recipe, Table1Proportions) {
    const auto q = target_proportions(table1_recipe());
    double legal_budget = 0.0;
    for (const auto& s : table1_recipe().sources) {
        if (s.kind == SourceKind::Legal) legal_budget += s.token_budget;
    }
    EXPECT_NEAR(legal_budget, 523.074, 1e-9);
    double sum = 0.0;
    for (const auto& s : q) sum += s.proportion;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    auto find = [&](const std::string& n) {
        for (const auto& s : q) {
            if (s.name == n) return s.proportion;
        }
        return -1.0;
    };
    EXPECT_NEAR(find("freelaw"), 0.93 * 15.0 / 523.074, 1e-12);
    EXPECT_NEAR(find("web-legal"), 0.93 * 400.0 / 523.074, 1e-12);
    EXPECT_NEAR(find("replay-slimpajama"), 0.02, 1e-12);
    EXPECT_NEAR(find("math"), 0.05, 1e-12);
}

TEST(Recipe, ValidationErrors) {
    auto r = small_recipe();
    r.sources.push_back({"freelaw", 1, SourceKind::Legal});
    EXPECT_THROW(r.validate(), ConfigError);
    r = small_recipe();
    r.sources.pop_back();  // math fraction reserved but no math source
    EXPECT_THROW(r.validate(), ConfigError);
    r = small_recipe();
    r.replay_fraction = 0.99;
    EXPECT_THROW(r.validate(), ConfigError);
    EXPECT_THROW(mix_recipe_from_json(nlohmann::json::parse(R"({"sources": [], "extra": 1})")), ConfigError);
    EXPECT_THROW(mix_recipe_from_json(nlohmann::json::parse(R"({"sources": [{"name": "x", "budget": 0}]})")), ConfigError);
}

TEST(Recipe, JsonRoundTrip) {
    const auto r = table1_recipe();
    EXPECT_EQ(to_json(mix_recipe_from_json(to_json(r))), to_json(r));
}

TEST(Recipe, AnnealingSplitsEvenly) {
    const auto q = target_proportions(annealing_recipe());
    ASSERT_EQ(q.size(), 2u);
    EXPECT_DOUBLE_EQ(q[0].proportion, 0.5);
    EXPECT_DOUBLE_EQ(q[1].proportion, 0.5);
}

TEST(Plan, QuotasSumToTotalWithLargestRemainder) {
    for (std::uint64_t total : {1ull, 7ull, 999ull, 1000000ull, 123456789ull}) {
        const auto plan = build_sampling_plan(table1_recipe(), total);
        std::uint64_t sum = 0;
        for (const auto& q : plan.quotas) {
            sum += q.tokens;
            const double exact = q.proportion * double(total);
            EXPECT_LE(std::abs(double(q.tokens) - exact), 1.0) << q.name;
        }
        EXPECT_EQ(sum, total);
    }
}

TEST(Plan, InsufficientDataIsPlanningError) {
    const std::map<std::string, std::uint64_t> have = {{"freelaw", 10}, {"edgar", 10}, {"replay", 10}, {"math", 10}};
    EXPECT_THROW(build_sampling_plan(small_recipe(), 1000, &have), PlanningError);
    auto r = small_recipe();
    r.allow_repetition = true;
    EXPECT_NO_THROW(build_sampling_plan(r, 1000, &have));
    const std::map<std::string, std::uint64_t> none = {{"freelaw", 10}};
    EXPECT_THROW(build_sampling_plan(r, 1000, &none), PlanningError);
}

TEST(Sample, MeetsQuotasExactly) {
    const auto recipe = small_recipe();
    const auto shards = synthetic_shards(recipe, 400, 600, 1);
    const auto plan = build_sampling_plan(recipe, 50000);
    const ByteTokenizer tok;
    const auto mix = sample_mix(plan, shards, 42, tok, 512);
    EXPECT_EQ(mix.total(), 50000u);
    for (const auto& q : plan.quotas) EXPECT_EQ(mix.realized_tokens.at(q.name), q.tokens) << q.name;
    std::uint64_t content = 0;
    for (const auto& ex : mix.examples) {
        ASSERT_EQ(ex.tokens.size(), 512u);
        for (TokenId t : ex.tokens) content += t < 256;
    }
    EXPECT_EQ(content, 50000u);
}

TEST(Sample, DeterministicForSeed) {
    const auto recipe = small_recipe();
    const auto shards = synthetic_shards(recipe, 200, 300, 2);
    const auto plan = build_sampling_plan(recipe, 20000);
    const ByteTokenizer tok;
    const auto a = sample_mix(plan, shards, 7, tok, 256);
    const auto b = sample_mix(plan, shards, 7, tok, 256);
    const auto c = sample_mix(plan, shards, 8, tok, 256);
    EXPECT_EQ(a.examples, b.examples);
    EXPECT_NE(a.examples, c.examples);
}

TEST(Sample, ExhaustionWithoutRepetitionFails) {
    const auto recipe = small_recipe();
    const auto shards = synthetic_shards(recipe, 2, 10, 3);
    const auto plan = build_sampling_plan(recipe, 5000);
    const ByteTokenizer tok;
    EXPECT_THROW(sample_mix(plan, shards, 1, tok, 64), StageError);
    auto rep = recipe;
    rep.allow_repetition = true;
    const auto mix = sample_mix(build_sampling_plan(rep, 5000), shards, 1, tok, 64);
    EXPECT_EQ(mix.total(), 5000u);
}

TEST(Sample, MissingShardIsPlanningError) {
    const auto plan = build_sampling_plan(small_recipe(), 100);
    const ByteTokenizer tok;
    EXPECT_THROW(sample_mix(plan, {}, 1, tok, 64), PlanningError);
}

TEST(Recipe, ProportionsNormalizeByListedBudgets) {
    MixRecipe r;
    r.replay_fraction = 0.0;
    r.math_fraction = 0.0;
    r.sources = {{"web-legal", 400, SourceKind::Legal}, {"rest", 120, SourceKind::Legal}};
    const auto q = target_proportions(r);
    EXPECT_DOUBLE_EQ(q[0].proportion, 400.0 / 520.0);
}
