#include <gtest/gtest.h>

#include "lexcorpus/extract.hpp"
#include "lexcorpus/hash.hpp"
#include "lexcorpus/normalize.hpp"
#include "test_util.hpp"

using namespace lexcorpus;

TEST(Extract, PlainIsIdentity) { EXPECT_EQ(extract_text("hello", InputFormat::Plain), "hello"); }

TEST(Extract, HtmlTagsStripped) { EXPECT_EQ(extract_text("<p>Hello</p>", InputFormat::Html), "Hello"); }

TEST(Extract, HtmlDropsScriptStyleAndComments) {
    const auto t = html_to_text("<html><head><style>p{}</style><script>var x = '<p>';</script></head>"
                                "<body><!-- note --><h1>Title</h1><p>A &amp; B &lt;C&gt; &#233;&#x41;</p></body></html>");
    EXPECT_EQ(t, "Title\n\nA & B <C> \xC3\xA9" "A");
}

TEST(Extract, ExternalStubExtractor) {
    testutil::TempDir dir;
    testutil::write_file(dir / "stub.sh", "#!/bin/sh\necho X\n");
    ExtractorConfig cfg{"sh " + (dir / "stub.sh").string() + " {input}"};
    EXPECT_EQ(extract_text("%PDF-1.4 fixture", InputFormat::External, cfg), "X");
}

TEST(Extract, ExternalSeesInputBytes) {
    ExtractorConfig cfg{"cat"};
    EXPECT_EQ(extract_text("passed through", InputFormat::External, cfg), "passed through");
}

TEST(Extract, ExternalFailureCarriesStderrExcerpt) {
    testutil::TempDir dir;
    testutil::write_file(dir / "fail.sh", "#!/bin/sh\necho 'corrupt xref table' >&2\nexit 3\n");
    ExtractorConfig cfg{"sh " + (dir / "fail.sh").string()};
    try {
        extract_text("x", InputFormat::External, cfg);
        FAIL() << "expected ExtractionFailed";
    } catch (const ExtractionFailed& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("status 3"), std::string::npos);
        EXPECT_NE(msg.find("corrupt xref table"), std::string::npos);
    }
}

TEST(Extract, ExternalWithoutCommandIsConfigError) {
    EXPECT_THROW(extract_text("x", InputFormat::External, {}), ConfigError);
    EXPECT_THROW(input_format_from_string("pdf"), ConfigError);
}

TEST(Normalize, CompatibilityMappings) {
    EXPECT_EQ(normalize_nfkc("\xEF\xAC\x81"), "fi");   // U+FB01
    EXPECT_EQ(normalize_nfkc("\xE2\x91\xA0"), "1");    // U+2460
    EXPECT_EQ(normalize_nfkc("\xEF\xBC\xA1"), "A");    // fullwidth A
    EXPECT_EQ(normalize_nfkc("plain ascii"), "plain ascii");
}

TEST(Normalize, IdempotentOnFixtures) {
    static const char* kPieces[] = {"\xEF\xAC\x81", "\xE2\x91\xA0", "e\xCC\x81", "\xC3\xA9", "\xE2\x84\xA2", " ",
                                    "court",        "\xC2\xBD",     "\xEF\xBC\x9F", "\n", "\xE3\x8E\x8F", "x"};
    SplitMix64 rng(3);
    for (int i = 0; i < 1000; ++i) {
        std::string doc;
        const auto n = 1 + rng.below(40);
        for (std::uint64_t k = 0; k < n; ++k) doc += kPieces[rng.below(std::size(kPieces))];
        const auto once = normalize_nfkc(doc);
        ASSERT_EQ(normalize_nfkc(once), once) << doc;
    }
}

TEST(RepairLines, JoinsMidSentenceBreak) { EXPECT_EQ(repair_lines("the court\nheld that"), "the court held that"); }

TEST(RepairLines, KeepsSentenceBoundary) { EXPECT_EQ(repair_lines("held that.\nThe court"), "held that.\nThe court"); }

TEST(RepairLines, Empty) { EXPECT_EQ(repair_lines(""), ""); }

TEST(RepairLines, KeepsBlankLinesAndUppercaseStarts) {
    EXPECT_EQ(repair_lines("first para\n\nsecond para"), "first para\n\nsecond para");
    EXPECT_EQ(repair_lines("Section 4\nApplicability"), "Section 4\nApplicability");
    EXPECT_EQ(repair_lines("he said \"stop.\"\nthen left"), "he said \"stop.\"\nthen left");
}
