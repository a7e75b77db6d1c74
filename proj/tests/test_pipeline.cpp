#include <cstdlib>
#include <sstream>

#include <gtest/gtest.h>

#include "lexcorpus/pipeline.hpp"
#include "test_util.hpp"

using namespace lexcorpus;
namespace fs = std::filesystem;

namespace {

const char* kProse[] = {"the court held that the contract was void",
                        "the appellant argued that the statute did not apply",
                        "the commission shall adopt implementing acts",
                        "the registrant filed its annual report with the commission",
                        "member states shall ensure that the measures are proportionate"};

/// Small three-source corpus plus a config exercising every stage.
class PipelineFixture : public ::testing::Test {
protected:
    void SetUp() override {
        ::unsetenv("LEXCORPUS_WORKSPACE");
        SplitMix64 rng(3);
        std::string lines;
        const char* sources[] = {"freelaw", "replay", "math"};
        for (int i = 0; i < 90; ++i) {
            std::string text;
            for (int s = 0; s < 3; ++s) text += std::string(kProse[rng.below(5)]) + ". ";
            text += testutil::random_words(rng, 60, 400) + ".\n";
            RawDocument d;
            d.id = "doc" + std::to_string(i);
            d.source = sources[i % 3];
            d.text = text + "Page " + std::to_string(i) + "\n";
            lines += to_json(d).dump() + "\n";
            if (i % 10 == 0) {  // planted duplicate
                d.id += "-copy";
                lines += to_json(d).dump() + "\n";
            }
        }
        testutil::write_file(dir_ / "corpus.jsonl", lines);
        config_ = nlohmann::json::parse(R"({
          "seed": 5,
          "workspace": "ws",
          "stages": [
            {"stage": "ingest", "config": {"inputs": ["corpus.jsonl"]}},
            "normalize",
            "rule-filter",
            {"stage": "perplexity", "config": {"order": 2, "threshold": 1500}},
            "dedup",
            {"stage": "pack", "config": {"seq_len": 256}},
            {"stage": "mix", "config": {"seq_len": 256, "recipe": {"sources": [
                {"name": "freelaw", "budget": 1, "kind": "legal"},
                {"name": "replay", "budget": 1, "kind": "replay"},
                {"name": "math", "budget": 1, "kind": "math"}]}}}
          ]})");
    }

    PipelineConfig config() const { return pipeline_config_from_json(config_, dir_.path()); }

    testutil::TempDir dir_;
    nlohmann::json config_;
};

int run_cli(const std::string& args) {
    const char* cli = std::getenv("LEXCORPUS_CLI");
    if (!cli) return -1;
    const int status = std::system((std::string(cli) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(EnvInterpolation, ReplacesAndRejectsUnset) {
    ::setenv("LEXCORPUS_TEST_DIR", "/data", 1);
    EXPECT_EQ(interpolate_env("${LEXCORPUS_TEST_DIR}/x.jsonl"), "/data/x.jsonl");
    EXPECT_EQ(interpolate_env("no vars $ here"), "no vars $ here");
    ::unsetenv("LEXCORPUS_TEST_UNSET");
    EXPECT_THROW(interpolate_env("${LEXCORPUS_TEST_UNSET}"), ConfigError);
}

TEST_F(PipelineFixture, PlanListsStagesInOrder) {
    const auto stages = plan(config());
    ASSERT_EQ(stages.size(), 7u);
    for (std::size_t i = 0; i < stages.size(); ++i) EXPECT_EQ(stages[i].name, kStageChain[i]);
    EXPECT_EQ(stages[1].inputs.front(), stages[0].outputs.front());
    EXPECT_EQ(stages[6].inputs.size(), 2u);
    EXPECT_EQ(stages[3].dir.filename(), "04-perplexity");
}

TEST_F(PipelineFixture, OmittedStageRewiresInputs) {
    auto& st = config_["stages"];
    st.erase(4);  // dedup
    const auto stages = plan(config());
    ASSERT_EQ(stages.size(), 6u);
    EXPECT_EQ(stages[4].name, "pack");
    EXPECT_EQ(stages[4].inputs.front(), stages[3].outputs.front());
}

TEST_F(PipelineFixture, MisorderedStagesNameBoth) {
    auto& st = config_["stages"];
    std::swap(st[3], st[4]);
    try {
        config();
        FAIL();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("dedup"), std::string::npos);
        EXPECT_NE(msg.find("perplexity"), std::string::npos);
    }
}

TEST_F(PipelineFixture, UnknownKeysAreConfigErrors) {
    config_["stages"][3]["config"]["treshold"] = 10;
    EXPECT_THROW(config(), ConfigError);
    config_["stages"][3]["config"].erase("treshold");
    config_["extra"] = true;
    EXPECT_THROW(config(), ConfigError);
}

TEST_F(PipelineFixture, ConfigDigestChainsDownstream) {
    const auto a = plan(config());
    config_["stages"][3]["config"]["threshold"] = 1400;
    const auto b = plan(config());
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].config_digest, b[i].config_digest);
    for (std::size_t i = 3; i < 7; ++i) EXPECT_NE(a[i].config_digest, b[i].config_digest);
}

TEST_F(PipelineFixture, RunResumeAndRerunFromChangedStage) {
    const auto first = run(config());
    ASSERT_EQ(first.exit_code, kExitOk) << first.message;
    EXPECT_EQ(first.executed.size(), 7u);
    EXPECT_TRUE(fs::exists(dir_ / "ws" / "07-mix" / "mix.bin"));

    RunOptions resume;
    resume.resume = true;
    const auto again = run(config(), resume);
    ASSERT_EQ(again.exit_code, kExitOk) << again.message;
    EXPECT_TRUE(again.executed.empty());
    EXPECT_EQ(again.final_hash(), first.final_hash());

    config_["stages"][2] = {{"stage", "rule-filter"}, {"config", {{"repeated_ngram_min_count", 50}}}};
    const auto changed = run(config(), resume);
    ASSERT_EQ(changed.exit_code, kExitOk) << changed.message;
    EXPECT_EQ(changed.skipped, (std::vector<std::string>{"ingest", "normalize"}));
    EXPECT_EQ(changed.executed.size(), 5u);
}

TEST_F(PipelineFixture, ResumeDetectsTamperedOutput) {
    ASSERT_EQ(run(config()).exit_code, kExitOk);
    testutil::write_file(dir_ / "ws" / "05-dedup" / "docs.jsonl", "{}\n");
    RunOptions resume;
    resume.resume = true;
    const auto r = run(config(), resume);
    ASSERT_EQ(r.exit_code, kExitOk) << r.message;
    EXPECT_EQ(r.executed.front(), "dedup");
}

TEST_F(PipelineFixture, ResumeDetectsChangedInputFile) {
    ASSERT_EQ(run(config()).exit_code, kExitOk);
    testutil::write_file(dir_ / "corpus.jsonl", testutil::read_file(dir_ / "corpus.jsonl") +
                                                    R"({"id":"new","source":"freelaw","text":"the court held"})" + "\n");
    RunOptions resume;
    resume.resume = true;
    EXPECT_EQ(run(config(), resume).executed.size(), 7u);
}

TEST_F(PipelineFixture, IdenticalOutputAcrossWorkspacesAndWorkers) {
    const auto a = run(config());
    config_["workspace"] = "ws2";
    config_["workers"] = 4;
    const auto b = run(config());
    ASSERT_EQ(a.exit_code, kExitOk);
    ASSERT_EQ(b.exit_code, kExitOk);
    ASSERT_EQ(a.manifests.size(), b.manifests.size());
    for (std::size_t i = 0; i < a.manifests.size(); ++i) EXPECT_EQ(a.manifests[i].output_hash, b.manifests[i].output_hash);
    EXPECT_EQ(testutil::read_file(dir_ / "ws" / "07-mix" / "mix.bin"), testutil::read_file(dir_ / "ws2" / "07-mix" / "mix.bin"));
}

TEST_F(PipelineFixture, StageFailureMovesDirectoryAside) {
    config_["stages"][6]["config"]["total_tokens"] = 100000000;
    const auto r = run(config());
    EXPECT_EQ(r.exit_code, kExitStageFailure);
    EXPECT_NE(r.message.find("mix"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir_ / "ws" / "failed" / "07-mix"));
    EXPECT_FALSE(fs::exists(dir_ / "ws" / "07-mix"));
    EXPECT_EQ(r.executed.size(), 6u);
}

TEST_F(PipelineFixture, MalformedInputFailsIngest) {
    testutil::write_file(dir_ / "corpus.jsonl", "{\"id\": 1\n");
    const auto r = run(config());
    EXPECT_EQ(r.exit_code, kExitStageFailure);
    EXPECT_TRUE(fs::exists(dir_ / "ws" / "failed" / "01-ingest"));
}

TEST_F(PipelineFixture, WorkspaceEnvironmentOverride) {
    ::setenv("LEXCORPUS_WORKSPACE", (dir_ / "elsewhere").c_str(), 1);
    const auto c = config();
    ::unsetenv("LEXCORPUS_WORKSPACE");
    EXPECT_EQ(c.workspace, dir_ / "elsewhere");
}

TEST_F(PipelineFixture, RejectionsCarryReasons) {
    ASSERT_EQ(run(config()).exit_code, kExitOk);
    const auto rejected = read_clean_documents((dir_ / "ws" / "05-dedup" / "rejected.jsonl").string());
    ASSERT_FALSE(rejected.empty());
    for (const auto& d : rejected) {
        ASSERT_TRUE(d.rejected);
        EXPECT_TRUE(d.rejected->reason == "near-dup" || d.rejected->reason == "exact-dup");
    }
    const auto plan_json = nlohmann::json::parse(testutil::read_file(dir_ / "ws" / "07-mix" / "plan.json"));
    std::uint64_t realized = 0;
    for (const auto& [k, v] : plan_json.at("realized_tokens").items()) realized += v.get<std::uint64_t>();
    EXPECT_EQ(realized, plan_json.at("total_tokens").get<std::uint64_t>());
}

TEST_F(PipelineFixture, CliExitCodes) {
    if (!std::getenv("LEXCORPUS_CLI")) GTEST_SKIP() << "LEXCORPUS_CLI not set";
    testutil::write_file(dir_ / "pipe.json", config_.dump());
    const auto cfg = (dir_ / "pipe.json").string();
    EXPECT_EQ(run_cli("plan --config " + cfg), 0);
    EXPECT_EQ(run_cli("run --config " + cfg), 0);
    EXPECT_EQ(run_cli("run --resume --config " + cfg), 0);

    auto bad = config_;
    std::swap(bad["stages"][3], bad["stages"][4]);
    testutil::write_file(dir_ / "bad.json", bad.dump());
    EXPECT_EQ(run_cli("run --config " + (dir_ / "bad.json").string()), 2);

    auto failing = config_;
    failing["workspace"] = "ws-fail";
    failing["stages"][6]["config"]["total_tokens"] = 100000000;
    testutil::write_file(dir_ / "fail.json", failing.dump());
    EXPECT_EQ(run_cli("run --config " + (dir_ / "fail.json").string()), 1);

    EXPECT_EQ(run_cli("validate --input " + (dir_ / "corpus.jsonl").string()), 0);
}
