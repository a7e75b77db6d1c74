#include <gtest/gtest.h>

#include "lexcorpus/corpus.hpp"
#include "lexcorpus/manifest.hpp"
#include "test_util.hpp"

using namespace lexcorpus;

namespace {

RawDocument doc(std::string id, std::string text, std::string source = "freelaw") {
    RawDocument d;
    d.id = std::move(id);
    d.source = std::move(source);
    d.text = std::move(text);
    return d;
}

}  // namespace

TEST(Validate, WellFormedInputHasNoIssues) {
    const std::vector<RawDocument> docs = {doc("a", "one"), doc("b", "two")};
    const auto r = validate_corpus(docs);
    EXPECT_TRUE(r.ok());
    EXPECT_EQ(r.documents, 2u);
}

TEST(Validate, DuplicateIdReportedOnce) {
    const std::vector<RawDocument> docs = {doc("a", "one"), doc("a", "two")};
    const auto r = validate_corpus(docs);
    ASSERT_EQ(r.issues.size(), 1u);
    EXPECT_EQ(r.count(IssueKind::DuplicateId), 1u);
    EXPECT_EQ(r.issues[0].index, 1u);
}

TEST(Validate, EmptyDocument) {
    const std::vector<RawDocument> docs = {doc("a", "")};
    const auto r = validate_corpus(docs);
    EXPECT_EQ(r.count(IssueKind::EmptyDocument), 1u);
    EXPECT_EQ(r.issues.size(), 1u);
}

TEST(Validate, InvalidUtf8IsReplacedOnRead) {
    testutil::TempDir dir;
    testutil::write_file(dir / "c.jsonl", std::string(R"({"id":"x","source":"s","text":"bad )") + "\xFF" + R"("})" + "\n");
    const auto docs = read_raw_documents((dir / "c.jsonl").string());
    ASSERT_EQ(docs.size(), 1u);
    EXPECT_EQ(docs[0].utf8_replacements, 1u);
    EXPECT_TRUE(utf8::is_valid(docs[0].text));
    EXPECT_EQ(validate_corpus(docs).count(IssueKind::InvalidUtf8), 1u);
}

TEST(Jsonl, RoundTripsRawDocuments) {
    testutil::TempDir dir;
    std::vector<RawDocument> docs = {doc("a", "line\none \"quoted\""), doc("b", "zwei \xC3\xBC")};
    docs[0].metadata["document_type"] = "judgment";
    write_jsonl((dir / "c.jsonl").string(), docs);
    EXPECT_EQ(read_raw_documents((dir / "c.jsonl").string()), docs);
}

TEST(Jsonl, MalformedLineNamesFileAndLine) {
    testutil::TempDir dir;
    testutil::write_file(dir / "c.jsonl", "{\"id\":\"a\",\"source\":\"s\",\"text\":\"t\"}\n{broken\n");
    try {
        read_raw_documents((dir / "c.jsonl").string());
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
    }
}

TEST(CleanDocument, StepsMustIncrease) {
    auto d = CleanDocument::from_raw(doc("a", "t"));
    d.record_step(Step::Ingest);
    d.record_step(Step::RuleFilter);
    EXPECT_THROW(d.record_step(Step::Normalize), std::logic_error);
    EXPECT_THROW(d.record_step(Step::RuleFilter), std::logic_error);
}

TEST(CleanDocument, JsonRoundTrip) {
    auto d = CleanDocument::from_raw(doc("a", "t"));
    d.record_step(Step::Ingest);
    d.record_step(Step::Perplexity);
    d.normalized_perplexity = 123.5;
    d.reject("perplexity", "123.5");
    EXPECT_EQ(clean_document_from_json(to_json(d)), d);
}

TEST(Canonical, SortsBySourceThenId) {
    std::vector<RawDocument> docs = {doc("b", "", "y"), doc("a", "", "y"), doc("z", "", "x")};
    sort_canonical(docs);
    EXPECT_EQ(docs[0].id, "z");
    EXPECT_EQ(docs[1].id, "a");
    EXPECT_EQ(docs[2].id, "b");
}

TEST(Manifest, VerifiesOwnOutputs) {
    const StageResult r{"dedup", "cfg", 3, 1, 9, {"r1", "r2"}};
    const auto m = write_manifest(r);
    EXPECT_EQ(m.output_count, 2u);
    EXPECT_TRUE(verify_manifest(m, r.records).ok);
}

TEST(Manifest, MutatedRecordIsLocated) {
    const StageResult r{"dedup", "cfg", 3, 0, 9, {"r1", "r2", "r3"}};
    const auto m = write_manifest(r);
    const auto v = verify_manifest(m, {"r1", "rX", "r3"});
    EXPECT_FALSE(v.ok);
    ASSERT_TRUE(v.first_divergent.has_value());
    EXPECT_EQ(*v.first_divergent, 1u);
    EXPECT_FALSE(verify_manifest(m, {"r1", "r2"}).ok);
}

TEST(Manifest, SameInputsSameHash) {
    const StageResult r{"pack", "cfg", 3, 0, 9, {"a", "b"}};
    EXPECT_EQ(write_manifest(r).output_hash, write_manifest(r).output_hash);
    // Record boundaries matter.
    const StageResult s{"pack", "cfg", 3, 0, 9, {"ab"}};
    EXPECT_NE(write_manifest(r).output_hash, write_manifest(s).output_hash);
}

TEST(Manifest, SaveLoadRoundTrip) {
    testutil::TempDir dir;
    const auto m = write_manifest(StageResult{"mix", "d", 10, 2, 77, {"x", "y"}});
    save_manifest(m, (dir / "manifest.json").string());
    EXPECT_EQ(load_manifest((dir / "manifest.json").string()), m);
}

TEST(Manifest, FixedRecordsRejectTruncation) {
    testutil::TempDir dir;
    testutil::write_file(dir / "r.bin", "abcdefgh");
    EXPECT_EQ(read_fixed_records((dir / "r.bin").string(), 4), (std::vector<std::string>{"abcd", "efgh"}));
    EXPECT_THROW(read_fixed_records((dir / "r.bin").string(), 3), FormatError);
}
