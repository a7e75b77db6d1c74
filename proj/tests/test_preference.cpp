#include <cmath>

#include <gtest/gtest.h>

#include "lexcorpus/hash.hpp"
#include "lexcorpus/preference.hpp"

using namespace lexcorpus;

namespace {

double loss_at(std::array<double, 4> x, double beta) {
    return dpo_objective({x[0], x[1], x[2], x[3]}, beta).loss;
}

JudgeScores uniform(double v) { return {v, v, v}; }

}  // namespace

TEST(Dpo, EqualLogProbsGiveLn2) {
    for (double v : {0.0, -3.5, -120.0}) {
        const auto r = dpo_objective({v, v, v, v}, 0.1);
        EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
        EXPECT_NEAR(r.gradient[0], -0.05, 1e-12);
    }
}

TEST(Dpo, GradientMatchesCentralDifferences) {
    SplitMix64 rng(17);
    for (int i = 0; i < 100; ++i) {
        std::array<double, 4> x{};
        for (auto& v : x) v = -50.0 * rng.uniform();
        const double beta = 0.05 + rng.uniform();
        const auto r = dpo_objective({x[0], x[1], x[2], x[3]}, beta);
        for (int k = 0; k < 4; ++k) {
            auto hi = x, lo = x;
            hi[k] += 1e-6;
            lo[k] -= 1e-6;
            const double fd = (loss_at(hi, beta) - loss_at(lo, beta)) / 2e-6;
            ASSERT_LT(std::abs(fd - r.gradient[k]), 1e-6 * std::max(1.0, std::abs(r.gradient[k]))) << i << " " << k;
        }
    }
}

TEST(Dpo, PositiveAndDecreasingInMargin) {
    double prev = INFINITY;
    for (double m = -200.0; m <= 200.0; m += 5.0) {
        const double l = dpo_objective({m, 0, 0, 0}, 0.1).loss;
        EXPECT_GT(l, 0.0);
        EXPECT_LT(l, prev);
        prev = l;
    }
    EXPECT_TRUE(std::isfinite(dpo_objective({-1e6, 0, 0, 0}, 1.0).loss));
    EXPECT_THROW(dpo_objective({}, 0.0), std::invalid_argument);
}

TEST(StageConfigs, PublishedValues) {
    const auto pre = emit_stage_config(TrainingStage::Pretrain);
    EXPECT_EQ(pre.learning_rate, 2e-5);
    EXPECT_EQ(pre.grad_accumulation, 4);
    EXPECT_EQ(pre.beta1, 0.99);
    EXPECT_EQ(pre.beta2, 0.90);
    EXPECT_EQ(pre.batch_size, 8);
    EXPECT_EQ(emit_stage_config(TrainingStage::Pretrain, ModelProfile::Large).batch_size, 4);
    const auto ift = emit_stage_config(TrainingStage::Ift);
    EXPECT_EQ(ift.learning_rate, 1e-5);
    EXPECT_EQ(ift.epochs, 1.0);
    EXPECT_EQ(emit_stage_config(TrainingStage::Dpo).learning_rate, 1e-6);
    EXPECT_EQ(to_json(pre).at("optimizer").at("name"), "AdamW");
    EXPECT_THROW(training_stage_from_string("rlhf"), ConfigError);
}

TEST(PreferencePair, ChoosesExtremes) {
    FunctionJudge judge([](const std::string&, const std::string& r) {
        if (r == "good") return uniform(0.9);
        if (r == "bad") return uniform(0.1);
        return uniform(0.5);
    });
    const auto p = build_preference_pair("q", {"ok", "bad", "good", "ok2"}, judge);
    EXPECT_EQ(p.chosen, "good");
    EXPECT_EQ(p.rejected, "bad");
    EXPECT_NEAR(p.chosen_scores.aggregate(), 0.9, 1e-12);
}

TEST(PreferencePair, TiesPreferEarlierCandidate) {
    FunctionJudge judge([](const std::string&, const std::string&) { return uniform(0.5); });
    const auto p = build_preference_pair("q", {"a", "b", "c"}, judge);
    EXPECT_EQ(p.chosen, "a");
    EXPECT_EQ(p.rejected, "b");
    EXPECT_THROW(build_preference_pair("q", {"a"}, judge), std::invalid_argument);
    EXPECT_THROW(build_preference_pair("q", {"a", "a"}, judge), std::invalid_argument);
}

TEST(PreferencePair, OutOfRangeScoresRejected) {
    FunctionJudge judge([](const std::string&, const std::string&) { return uniform(1.5); });
    EXPECT_THROW(build_preference_pair("q", {"a", "b"}, judge), ClientError);
}

TEST(LlmJudge, ParsesJsonInsideReply) {
    TemplateClient client(std::map<std::string, std::string>{{"judge", R"(Sure. {"factual_accuracy": 0.8, "relevance": 0.6, "logical_coherence": 1.0} done)"}});
    LlmJudge judge(client);
    const auto s = judge.score("q", "r");
    EXPECT_EQ(s, (JudgeScores{0.8, 0.6, 1.0}));
    TemplateClient broken(std::map<std::string, std::string>{{"judge", "no scores here"}});
    LlmJudge bad(broken);
    EXPECT_THROW(bad.score("q", "r"), ClientError);
    TemplateClient partial(std::map<std::string, std::string>{{"judge", R"({"relevance": 0.5})"}});
    LlmJudge half(partial);
    EXPECT_THROW(half.score("q", "r"), ClientError);
}
