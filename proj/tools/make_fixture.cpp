// Deterministic synthetic corpus: legal-flavoured prose from a Zipfian
// vocabulary, with planted exact/near duplicates, page-number lines, markup
// debris, separator runs and a few garbage documents.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lexcorpus/corpus.hpp"
#include "lexcorpus/hash.hpp"

using namespace lexcorpus;

namespace {

const std::vector<std::string> kLegalWords = {
    "court",     "appellant", "respondent", "statute",   "section",    "agreement", "party",      "parties",
    "contract",  "clause",    "liability",  "damages",   "plaintiff",  "defendant", "judgment",   "appeal",
    "tribunal",  "regulation", "directive", "article",   "paragraph",  "provision", "obligation", "breach",
    "remedy",    "evidence",  "witness",    "counsel",   "hearing",    "order",     "jurisdiction", "claim",
    "claimant",  "petition",  "motion",     "ruling",    "precedent",  "authority", "member",     "state",
    "commission", "council",  "securities", "filing",    "registrant", "disclosure", "patent",    "invention",
    "applicant", "examiner",  "license",    "tenant",    "landlord",   "property",  "estate",     "trust",
    "trustee",   "beneficiary", "negligence", "duty",    "care",       "standard",  "review",     "reasonable",
    "the",       "of",        "to",         "and",       "in",         "that",      "a",          "is",
    "shall",     "be",        "by",         "for",       "under",      "with",      "on",         "as",
    "any",       "such",      "which",      "not",       "or",         "this",      "may",        "has",
    "was",       "it",        "its",        "their",     "from",       "an",        "been",       "upon",
};

const std::vector<std::string> kSyllables = {"ad", "ju", "di", "ca", "tion", "lex", "pro", "vi", "sio", "re",
                                             "gu", "la", "tor", "con", "sti", "tu", "ment", "ar", "bi", "tral"};

const std::vector<std::string> kSources = {"freelaw", "edgar", "eu-legislation", "govinfo", "replay-slimpajama", "math"};
const std::vector<std::string> kDocTypes = {"judgment", "regulation", "directive", "filing", "opinion", "order"};

struct Vocab {
    std::vector<std::string> words;
    std::vector<double> cdf;
};

Vocab make_vocab(SplitMix64& rng, std::size_t extra) {
    Vocab v;
    v.words = kLegalWords;
    for (std::size_t i = 0; i < extra; ++i) {
        std::string w;
        const auto n = 2 + rng.below(3);
        for (std::uint64_t k = 0; k < n; ++k) w += kSyllables[rng.below(kSyllables.size())];
        v.words.push_back(w);
    }
    double total = 0.0;
    for (std::size_t r = 0; r < v.words.size(); ++r) {
        total += 1.0 / std::pow(static_cast<double>(r + 1), 1.05);
        v.cdf.push_back(total);
    }
    for (auto& c : v.cdf) c /= total;
    return v;
}

const std::string& draw(const Vocab& v, SplitMix64& rng) {
    const double u = rng.uniform();
    const auto it = std::lower_bound(v.cdf.begin(), v.cdf.end(), u);
    return v.words[std::min<std::size_t>(static_cast<std::size_t>(it - v.cdf.begin()), v.words.size() - 1)];
}

std::string sentence(const Vocab& v, SplitMix64& rng) {
    const auto n = 8 + rng.below(18);
    std::string s;
    for (std::uint64_t i = 0; i < n; ++i) {
        if (i) s += (rng.below(14) == 0 ? ", " : " ");
        s += draw(v, rng);
    }
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s + ".";
}

/// Wraps a paragraph at ~72 columns, like text pulled out of a PDF.
std::string wrap(const std::string& para) {
    std::string out;
    std::size_t col = 0, i = 0;
    while (i < para.size()) {
        auto sp = para.find(' ', i);
        if (sp == std::string::npos) sp = para.size();
        const auto word = para.substr(i, sp - i);
        if (col > 0 && col + word.size() > 72) {
            out += '\n';
            col = 0;
        } else if (col > 0) {
            out += ' ';
            ++col;
        }
        out += word;
        col += word.size();
        i = sp + 1;
    }
    return out;
}

std::string legal_document(const Vocab& v, SplitMix64& rng, std::size_t target_bytes) {
    std::string text;
    int page = 1;
    while (text.size() < target_bytes) {
        std::string para;
        const auto n = 2 + rng.below(5);
        for (std::uint64_t k = 0; k < n; ++k) para += (k ? " " : "") + sentence(v, rng);
        text += wrap(para) + "\n\n";
        if (rng.below(4) == 0) text += std::to_string(page++) + "\n\n";
        if (rng.below(12) == 0) text += "<b>Section " + std::to_string(rng.below(90) + 1) + "</b> &amp; notes\n\n";
        if (rng.below(25) == 0) text += std::string(40, '-') + "\n\n";
    }
    return text;
}

std::string garbage_document(SplitMix64& rng, std::size_t bytes) {
    static const char kChars[] = "abcdefghijklmnopqrstuvwxyz0123456789";
    std::string s;
    while (s.size() < bytes) {
        const auto n = 3 + rng.below(9);
        for (std::uint64_t k = 0; k < n; ++k) s += kChars[rng.below(sizeof kChars - 1)];
        s += ' ';
    }
    return s;
}

std::string mutate(const std::string& text, const Vocab& v, SplitMix64& rng, double rate) {
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
        auto sp = text.find_first_of(" \n", i);
        if (sp == std::string::npos) sp = text.size();
        out += rng.uniform() < rate ? draw(v, rng) : text.substr(i, sp - i);
        if (sp < text.size()) out += text[sp];
        i = sp + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Write a deterministic synthetic corpus"};
    std::string out_path;
    std::size_t bytes = 5u << 20;
    std::uint64_t seed = 7;
    bool reference = false;
    app.add_option("--out", out_path, "Output file")->required();
    app.add_option("--bytes", bytes, "Approximate total text bytes");
    app.add_option("--seed", seed, "Seed");
    app.add_flag("--reference", reference, "Only clean prose (language-model training data)");
    CLI11_PARSE(app, argc, argv);

    // The vocabulary is shared between corpus and reference runs.
    SplitMix64 vocab_rng(0x70cab);
    const Vocab vocab = make_vocab(vocab_rng, 2500);
    SplitMix64 rng(seed);
    std::vector<RawDocument> docs;
    std::size_t total = 0;
    std::size_t n = 0;
    while (total < bytes) {
        RawDocument d;
        d.source = kSources[rng.below(kSources.size())];
        char id[32];
        std::snprintf(id, sizeof id, "doc-%06zu", n++);
        d.id = id;
        d.metadata["document_type"] = kDocTypes[rng.below(kDocTypes.size())];
        d.metadata["issue_date"] = std::to_string(1990 + rng.below(34)) + "-0" + std::to_string(1 + rng.below(9)) + "-1" +
                                   std::to_string(rng.below(10));
        const auto roll = reference ? 100 : rng.below(100);
        if (roll < 2 && !docs.empty()) {
            d.text = docs[rng.below(docs.size())].text;  // exact duplicate
        } else if (roll < 6 && !docs.empty()) {
            d.text = mutate(docs[rng.below(docs.size())].text, vocab, rng, 0.02);  // near duplicate
        } else if (roll < 8) {
            d.text = garbage_document(rng, 600 + rng.below(1500));
        } else {
            d.text = legal_document(vocab, rng, 800 + rng.below(4000));
        }
        total += d.text.size();
        docs.push_back(std::move(d));
    }
    write_jsonl(out_path, docs);
    std::cerr << docs.size() << " documents, " << total << " bytes\n";
    return 0;
}
