#include <gtest/gtest.h>

#include "lexcorpus/eval.hpp"
#include "lexcorpus/hash.hpp"
#include "test_util.hpp"

using namespace lexcorpus;

namespace {

TaskSpec yes_no_task(const std::string& id, const std::vector<std::string>& golds) {
    TaskSpec t{id, "issue-spotting", {"Yes", "No"}, {}};
    for (std::size_t i = 0; i < golds.size(); ++i) t.items.push_back({"i" + std::to_string(i), "q", golds[i]});
    return t;
}

std::vector<TaskScore> scores_with(const std::string& category, const std::vector<double>& values) {
    std::vector<TaskScore> out;
    for (std::size_t i = 0; i < values.size(); ++i) out.push_back({category + std::to_string(i), category, values[i], 0.0, 10});
    return out;
}

}  // namespace

TEST(ParseAnswer, CaseInsensitiveWholeWord) {
    const std::vector<std::string> labels = {"Yes", "No"};
    EXPECT_EQ(parse_answer("yes, clearly", labels), "Yes");
    EXPECT_EQ(parse_answer("NO.", labels), "No");
    EXPECT_EQ(parse_answer("Nobody knows", labels), std::nullopt);
    EXPECT_EQ(parse_answer("", labels), std::nullopt);
}

TEST(ParseAnswer, AnswerLineHasPriority) {
    const std::vector<std::string> labels = {"Yes", "No"};
    EXPECT_EQ(parse_answer("Yes, one might think so.\nAnswer: No", labels), "No");
    EXPECT_EQ(parse_answer("No doubt about it: yes", labels), "No");
}

TEST(ParseAnswer, LongerLabelWinsAtSamePosition) {
    EXPECT_EQ(parse_answer("Rule conclusion follows", {"Rule", "Rule conclusion"}), "Rule conclusion");
    EXPECT_THROW(parse_answer("x", {}), std::invalid_argument);
}

TEST(BalancedAccuracy, MatchesPerClassRecallOracle) {
    SplitMix64 rng(21);
    for (int m = 0; m < 100; ++m) {
        const std::size_t k = 2 + rng.below(5);
        std::vector<std::string> labels;
        for (std::size_t i = 0; i < k; ++i) labels.push_back("L" + std::to_string(i));
        std::vector<ParsedAnswer> preds;
        std::vector<std::string> golds;
        double recall_sum = 0.0;
        std::size_t present = 0;
        for (std::size_t g = 0; g < k; ++g) {
            std::size_t row = 0, diag = 0;
            for (std::size_t p = 0; p <= k; ++p) {  // p == k: parse failure
                const auto c = rng.below(8);
                for (std::uint64_t n = 0; n < c; ++n) {
                    golds.push_back(labels[g]);
                    preds.push_back(p == k ? std::nullopt : ParsedAnswer(labels[p]));
                }
                row += c;
                if (p == g) diag += c;
            }
            if (row) {
                recall_sum += double(diag) / double(row);
                ++present;
            }
        }
        if (!present) continue;
        ASSERT_NEAR(balanced_accuracy(preds, golds, labels), recall_sum / double(present), 1e-12);
    }
}

TEST(BalancedAccuracy, Errors) {
    EXPECT_THROW(balanced_accuracy({}, {}, {"a"}), std::invalid_argument);
    EXPECT_THROW(balanced_accuracy({std::nullopt}, {"a", "b"}, {"a", "b"}), std::invalid_argument);
    EXPECT_THROW(balanced_accuracy({std::nullopt}, {"c"}, {"a", "b"}), std::invalid_argument);
}

TEST(ScoreTask, ParseFailuresAndMissingCountAsWrong) {
    const auto task = yes_no_task("t", {"Yes", "Yes", "No", "No"});
    const auto s = score_task(task, {{"i0", "Yes"}, {"i1", "dunno"}, {"i2", "no"}});
    ASSERT_TRUE(s);
    EXPECT_DOUBLE_EQ(s->balanced_accuracy, 0.5 * (0.5 + 0.5));
    EXPECT_DOUBLE_EQ(s->parse_failure_rate, 0.5);
}

TEST(ScoreTask, SingleLabelTaskSkippedWithWarning) {
    std::string warning;
    EXPECT_FALSE(score_task(yes_no_task("mono", {"Yes", "Yes"}), {}, &warning));
    EXPECT_NE(warning.find("mono"), std::string::npos);
}

TEST(Aggregate, CategoryMeansRecomputeFromRawScores) {
    auto scores = scores_with("rule-recall", {0.5, 0.7});
    const auto more = scores_with("interpretation", {0.9});
    scores.insert(scores.end(), more.begin(), more.end());
    const auto r = aggregate_categories(scores);
    EXPECT_NEAR(r.categories.at("rule-recall").mean, 0.6, 1e-12);
    EXPECT_NEAR(r.overall, (0.5 + 0.7 + 0.9) / 3.0, 1e-12);
    EXPECT_NE(format_category_table(r).find("overall"), std::string::npos);
    EXPECT_THROW(aggregate_categories({}), std::invalid_argument);
}

TEST(DeltaTable, ReproducesPublishedCellStrings) {
    const auto a = scores_with("rule-application", {0.6, 0.6, 0.6, 0.4, 0.4, 0.4, 0.4, 0.4});
    const auto b = scores_with("rule-application", std::vector<double>(8, 0.5));
    const auto rows = delta_table(a, b);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(format_delta_cell(rows[0]), "37.5% / 62.5%");

    const auto c = scores_with("interpretation", {0.9, 0.8});
    const auto d = scores_with("interpretation", {0.1, 0.2});
    EXPECT_EQ(format_delta_cell(delta_table(c, d)[0]), "100.0% / \xE2\x80\x94");
}

TEST(DeltaTable, ZeroDeltaCountsBothWays) {
    const auto rows = delta_table(scores_with("x", {0.5}), scores_with("x", {0.5}));
    EXPECT_EQ(format_delta_cell(rows[0]), "100.0% / 100.0%");
}

TEST(DeltaTable, MismatchedTaskSetsNamed) {
    try {
        delta_table(scores_with("x", {0.5, 0.5}), scores_with("x", {0.5}));
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("x1"), std::string::npos);
    }
}

TEST(Tasks, LoadValidatesSpecs) {
    testutil::TempDir dir;
    testutil::write_file(dir / "t.json", R"({"tasks": [{"id": "t1", "category": "rule-recall", "labels": ["Yes", "No"],
        "items": [{"id": "a", "prompt": "p", "gold": "Yes"}]}]})");
    const auto tasks = load_tasks((dir / "t.json").string());
    ASSERT_EQ(tasks.size(), 1u);
    EXPECT_EQ(tasks[0].items[0].gold, "Yes");
    testutil::write_file(dir / "bad.json", R"([{"id": "t1", "category": "rule-recall", "labels": ["Yes"],
        "items": [{"id": "a", "prompt": "p", "gold": "Maybe"}]}])");
    EXPECT_THROW(load_tasks((dir / "bad.json").string()), FormatError);
    EXPECT_TRUE(is_known_category("mmlu-legal"));
    EXPECT_FALSE(is_known_category("vibes"));
}
