#pragma once

#include <unicode/uchar.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lexcorpus/corpus.hpp"
#include "lexcorpus/errors.hpp"
#include "lexcorpus/hash.hpp"
#include "lexcorpus/parallel.hpp"
#include "lexcorpus/utf8.hpp"

namespace lexcorpus {

// ---------------------------------------------------------------------------
// Tokenizer: lowercase, split on whitespace, every other non-alphanumeric code
// point is its own token.

inline constexpr std::string_view kLmTokenizerName = "ws-punct-lower-v1";

inline std::vector<std::string> lm_tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    std::size_t pos = 0;
    char32_t cp = 0;
    auto flush = [&] {
        if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    };
    while (utf8::next(text, pos, cp)) {
        const auto c = static_cast<UChar32>(cp);
        if (u_isUWhiteSpace(c) || cp == ' ' || cp == '\n' || cp == '\t' || cp == '\r') {
            flush();
        } else if (u_isalnum(c) || u_charType(c) == U_NON_SPACING_MARK || u_charType(c) == U_COMBINING_SPACING_MARK) {
            utf8::append(cur, static_cast<char32_t>(u_tolower(c)));
        } else {
            flush();
            std::string t;
            utf8::append(t, cp);
            tokens.push_back(std::move(t));
        }
    }
    flush();
    return tokens;
}

// ---------------------------------------------------------------------------
// Counting

inline constexpr std::string_view kBos = "<s>";
inline constexpr char kJoin = '\x1f';

/// Raw n-gram counts of orders 1..n over token strings, with one <s> before
/// each document. merge() is associative and commutative, so partial tables
/// from parallel workers combine into the same totals.
class NGramCounts {
public:
    explicit NGramCounts(int order) : order_(order), tables_(static_cast<std::size_t>(std::max(order, 1))) {
        if (order < 1) throw TrainingError("n-gram order must be >= 1");
    }

    void add_document(const std::vector<std::string>& tokens) {
        if (tokens.empty()) return;
        ++documents_;
        std::vector<std::string_view> seq;
        seq.reserve(tokens.size() + 1);
        seq.push_back(kBos);
        for (const auto& t : tokens) seq.push_back(t);
        std::string key;
        for (std::size_t i = 1; i < seq.size(); ++i) {
            key.clear();
            // Grow the n-gram leftwards from position i.
            std::string gram(seq[i]);
            ++tables_[0][gram];
            for (int k = 2; k <= order_ && static_cast<std::size_t>(k - 1) <= i; ++k) {
                gram.insert(0, 1, kJoin);
                gram.insert(0, seq[i - static_cast<std::size_t>(k - 1)]);
                ++tables_[static_cast<std::size_t>(k - 1)][gram];
            }
        }
    }

    void merge(const NGramCounts& other) {
        if (other.order_ != order_) throw TrainingError("merging count tables of different order");
        for (std::size_t k = 0; k < tables_.size(); ++k) {
            for (const auto& [g, c] : other.tables_[k]) tables_[k][g] += c;
        }
        documents_ += other.documents_;
    }

    [[nodiscard]] int order() const noexcept { return order_; }
    [[nodiscard]] std::uint64_t documents() const noexcept { return documents_; }
    /// Counts of order k (1-based), keyed by tokens joined with '\x1f'.
    [[nodiscard]] const std::unordered_map<std::string, std::uint64_t>& table(int k) const {
        return tables_.at(static_cast<std::size_t>(k - 1));
    }

private:
    int order_;
    std::uint64_t documents_ = 0;
    std::vector<std::unordered_map<std::string, std::uint64_t>> tables_;
};

// ---------------------------------------------------------------------------
// Model

struct PerplexityFilterConfig {
    double threshold = 1500.0;

    void validate() const {
        if (!(threshold > 1.0)) throw ConfigError("perplexity threshold must be > 1");
    }
};

/// Interpolated Kneser–Ney n-gram model with one discount per order.
///
/// Highest order uses raw counts; lower orders use continuation counts
/// (number of distinct left extensions), except n-grams starting with <s>,
/// which keep raw counts. The recursion bottoms out in a uniform distribution
/// over the vocabulary plus one unknown class:
///
///   P_k(w|h) = max(a(hw) - D_k, 0) / A(h) + D_k * T(h) / A(h) * P_{k-1}(w|h')
///
/// where A(h) = sum_w a(hw) and T(h) = |{w : a(hw) > 0}|. If h was never
/// seen at order k, the lower-order estimate is used unchanged.
class NGramModel {
public:
    using TokenId = std::uint32_t;
    static constexpr TokenId kUnk = 0;
    static constexpr TokenId kBosId = 1;
    static constexpr std::uint32_t kFormatVersion = 1;

    NGramModel() = default;

    [[nodiscard]] int order() const noexcept { return order_; }
    [[nodiscard]] std::size_t vocabulary_size() const noexcept { return words_.size(); }
    [[nodiscard]] double discount(int k) const { return discounts_.at(static_cast<std::size_t>(k - 1)); }
    [[nodiscard]] const std::string& config_digest() const noexcept { return config_digest_; }
    [[nodiscard]] const std::vector<std::string>& words() const noexcept { return words_; }

    [[nodiscard]] TokenId id(std::string_view token) const {
        auto it = index_.find(std::string(token));
        return it == index_.end() ? kUnk : it->second;
    }

    [[nodiscard]] std::vector<TokenId> ids(const std::vector<std::string>& tokens) const {
        std::vector<TokenId> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(id(t));
        return out;
    }

    /// P(word | history); history holds the preceding ids, oldest first,
    /// and may start with kBosId.
    [[nodiscard]] double prob(std::span<const TokenId> history, TokenId word) const {
        double p = 1.0 / static_cast<double>(words_.size() + 1);
        const std::size_t max_ctx = std::min<std::size_t>(history.size(), static_cast<std::size_t>(order_ - 1));
        std::string key;
        key.reserve(4 * (max_ctx + 1));
        for (std::size_t ctx_len = 0; ctx_len <= max_ctx; ++ctx_len) {
            const auto ctx = history.subspan(history.size() - ctx_len);
            key.clear();
            for (TokenId t : ctx) append_id(key, t);
            const auto& level = levels_[ctx_len];
            auto cit = level.contexts.find(key);
            if (cit == level.contexts.end()) break;
            const ContextStats& cs = cit->second;
            append_id(key, word);
            std::uint64_t a = 0;
            if (word != kUnk) {
                auto git = level.counts.find(key);
                if (git != level.counts.end()) a = git->second;
            }
            const double d = discounts_[ctx_len];
            const double total = static_cast<double>(cs.total);
            p = std::max(static_cast<double>(a) - d, 0.0) / total + d * static_cast<double>(cs.types) / total * p;
        }
        return p;
    }

    /// Natural-log probability of each token with a leading <s> context.
    [[nodiscard]] std::vector<double> token_log_probs(const std::vector<std::string>& tokens) const {
        std::vector<TokenId> seq;
        seq.reserve(tokens.size() + 1);
        seq.push_back(kBosId);
        for (const auto& t : tokens) seq.push_back(id(t));
        std::vector<double> out;
        out.reserve(tokens.size());
        for (std::size_t i = 1; i < seq.size(); ++i) {
            const std::size_t ctx = std::min<std::size_t>(i, static_cast<std::size_t>(order_ - 1));
            out.push_back(std::log(prob(std::span<const TokenId>(seq.data() + i - ctx, ctx), seq[i])));
        }
        return out;
    }

    // Serialization ---------------------------------------------------------

    [[nodiscard]] std::string serialize() const {
        std::string out;
        out.append("LXNGRAM\0", 8);
        put_u32(out, kFormatVersion);
        put_str(out, config_digest_);
        put_u32(out, static_cast<std::uint32_t>(order_));
        put_u32(out, static_cast<std::uint32_t>(words_.size()));
        for (const auto& w : words_) put_str(out, w);
        for (double d : discounts_) put_f64(out, d);
        for (int k = 1; k <= order_; ++k) {
            const auto& counts = levels_[static_cast<std::size_t>(k - 1)].counts;
            std::vector<std::pair<std::string, std::uint64_t>> sorted(counts.begin(), counts.end());
            std::sort(sorted.begin(), sorted.end());
            put_u64(out, sorted.size());
            for (const auto& [key, c] : sorted) {
                out.append(key);
                put_u64(out, c);
            }
        }
        return out;
    }

    static NGramModel deserialize(std::string_view bytes) {
        Reader r{bytes};
        if (r.take(8) != std::string_view("LXNGRAM\0", 8)) throw FormatError("not an n-gram model file");
        if (const auto v = r.u32(); v != kFormatVersion) throw FormatError("unsupported model version " + std::to_string(v));
        NGramModel m;
        m.config_digest_ = r.str();
        m.order_ = static_cast<int>(r.u32());
        if (m.order_ < 1 || m.order_ > 32) throw FormatError("bad model order");
        const auto nwords = r.u32();
        m.words_.reserve(nwords);
        for (std::uint32_t i = 0; i < nwords; ++i) m.words_.push_back(r.str());
        m.rebuild_index();
        for (int k = 1; k <= m.order_; ++k) m.discounts_.push_back(r.f64());
        m.levels_.resize(static_cast<std::size_t>(m.order_));
        for (int k = 1; k <= m.order_; ++k) {
            auto& level = m.levels_[static_cast<std::size_t>(k - 1)];
            const auto n = r.u64();
            level.counts.reserve(n);
            for (std::uint64_t i = 0; i < n; ++i) {
                std::string key(r.take(4 * static_cast<std::size_t>(k)));
                level.counts.emplace(std::move(key), r.u64());
            }
        }
        m.rebuild_contexts();
        return m;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write model '" + path + "'");
        const auto bytes = serialize();
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }

    static NGramModel load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read model '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        return deserialize(buf.str());
    }

    static NGramModel from_counts(const NGramCounts& counts);

private:
    struct ContextStats {
        std::uint64_t total = 0;
        std::uint64_t types = 0;
    };
    struct Level {
        std::unordered_map<std::string, std::uint64_t> counts;      // adjusted counts keyed by packed ids
        std::unordered_map<std::string, ContextStats> contexts;     // keyed by packed context ids
    };

    static void append_id(std::string& key, TokenId id) {
        char b[4];
        std::memcpy(b, &id, 4);
        key.append(b, 4);
    }
    static void put_u32(std::string& out, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    static void put_u64(std::string& out, std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    static void put_f64(std::string& out, double d) {
        std::uint64_t v = 0;
        std::memcpy(&v, &d, 8);
        put_u64(out, v);
    }
    static void put_str(std::string& out, std::string_view s) {
        put_u32(out, static_cast<std::uint32_t>(s.size()));
        out.append(s);
    }

    struct Reader {
        std::string_view bytes;
        std::size_t pos = 0;
        std::string_view take(std::size_t n) {
            if (pos + n > bytes.size()) throw FormatError("truncated model file");
            auto s = bytes.substr(pos, n);
            pos += n;
            return s;
        }
        std::uint64_t le(std::size_t n) {
            auto s = take(n);
            std::uint64_t v = 0;
            for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
            return v;
        }
        std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
        std::uint64_t u64() { return le(8); }
        double f64() {
            const std::uint64_t v = le(8);
            double d = 0;
            std::memcpy(&d, &v, 8);
            return d;
        }
        std::string str() { return std::string(take(u32())); }
    };

    void rebuild_index() {
        index_.clear();
        for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<TokenId>(i + 2));
    }

    void rebuild_contexts() {
        for (auto& level : levels_) {
            level.contexts.clear();
            for (const auto& [key, c] : level.counts) {
                auto& cs = level.contexts[key.substr(0, key.size() - 4)];
                cs.total += c;
                ++cs.types;
            }
        }
    }

    int order_ = 0;
    std::string config_digest_;
    std::vector<std::string> words_;  // id = index + 2
    std::unordered_map<std::string, TokenId> index_;
    std::vector<double> discounts_;
    std::vector<Level> levels_;
};

inline std::string ngram_config_digest(int order) {
    nlohmann::json cfg{{"order", order}, {"tokenizer", std::string(kLmTokenizerName)}, {"smoothing", "interpolated-kn-1d"}};
    return sha256_hex(cfg.dump());
}

/// Discount from count-of-counts: D = n1 / (n1 + 2 n2), kept in (0, 1].
inline double estimate_discount(std::uint64_t n1, std::uint64_t n2) {
    if (n1 == 0) return 0.5;
    const double d = static_cast<double>(n1) / (static_cast<double>(n1) + 2.0 * static_cast<double>(n2));
    return std::clamp(d, 1e-3, 1.0);
}

inline NGramModel NGramModel::from_counts(const NGramCounts& counts) {
    const int n = counts.order();
    if (counts.documents() == 0) throw TrainingError("cannot train on an empty corpus");

    NGramModel m;
    m.order_ = n;
    m.config_digest_ = ngram_config_digest(n);
    for (const auto& [w, c] : counts.table(1)) m.words_.push_back(w);
    std::sort(m.words_.begin(), m.words_.end());
    m.rebuild_index();

    auto split = [](std::string_view joined) {
        std::vector<std::string_view> parts;
        std::size_t start = 0;
        while (true) {
            const auto p = joined.find(kJoin, start);
            parts.push_back(joined.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
            if (p == std::string_view::npos) break;
            start = p + 1;
        }
        return parts;
    };
    auto pack = [&](std::span<const std::string_view> parts) {
        std::string key;
        key.reserve(parts.size() * 4);
        for (auto p : parts) append_id(key, p == kBos ? kBosId : m.id(p));
        return key;
    };

    m.levels_.resize(static_cast<std::size_t>(n));
    // Highest order: raw counts. Lower orders: continuation counts from the
    // order above, raw counts for <s>-initial grams.
    for (const auto& [g, c] : counts.table(n)) {
        const auto parts = split(g);
        m.levels_[static_cast<std::size_t>(n - 1)].counts[pack(parts)] += c;
    }
    for (int k = n - 1; k >= 1; --k) {
        auto& level = m.levels_[static_cast<std::size_t>(k - 1)];
        for (const auto& [g, c] : counts.table(k + 1)) {
            const auto parts = split(g);
            const std::span<const std::string_view> suffix(parts.data() + 1, parts.size() - 1);
            level.counts[pack(suffix)] += 1;
        }
        for (const auto& [g, c] : counts.table(k)) {
            if (g.size() >= kBos.size() && std::string_view(g).substr(0, kBos.size()) == kBos &&
                (g.size() == kBos.size() || g[kBos.size()] == kJoin)) {
                level.counts[pack(split(g))] = c;
            }
        }
    }

    for (int k = 1; k <= n; ++k) {
        std::uint64_t n1 = 0, n2 = 0;
        for (const auto& [key, c] : m.levels_[static_cast<std::size_t>(k - 1)].counts) {
            if (c == 1) ++n1;
            else if (c == 2) ++n2;
        }
        m.discounts_.push_back(estimate_discount(n1, n2));
    }
    m.rebuild_contexts();
    return m;
}

/// Trains on pre-tokenized documents. Counting is split across `workers`
/// partial tables that are merged in index order.
inline NGramModel train_ngram_lm(const std::vector<std::vector<std::string>>& corpus, int order, unsigned workers = 1) {
    if (order < 1) throw TrainingError("n-gram order must be >= 1");
    bool any = false;
    for (const auto& d : corpus) any |= !d.empty();
    if (!any) throw TrainingError("cannot train on an empty corpus");
    workers = std::max(1u, workers);
    std::vector<NGramCounts> partial(workers, NGramCounts(order));
    const std::size_t block = (corpus.size() + workers - 1) / workers;
    parallel_for(workers, workers, [&](std::size_t w) {
        for (std::size_t i = w * block; i < std::min(corpus.size(), (w + 1) * block); ++i) partial[w].add_document(corpus[i]);
    });
    NGramCounts total(order);
    for (const auto& p : partial) total.merge(p);
    return NGramModel::from_counts(total);
}

inline NGramModel train_ngram_lm_on_texts(const std::vector<std::string>& texts, int order, unsigned workers = 1) {
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(texts.size());
    for (const auto& t : texts) corpus.push_back(lm_tokenize(t));
    return train_ngram_lm(corpus, order, workers);
}

/// Sum of natural-log token probabilities.
inline double log_prob(const NGramModel& model, const std::vector<std::string>& tokens) {
    double s = 0.0;
    for (double lp : model.token_log_probs(tokens)) s += lp;
    return s;
}

/// exp(-(1/T) * sum log p); +infinity for an empty document.
inline double perplexity_normalized(const NGramModel& model, const std::vector<std::string>& tokens) {
    if (tokens.empty()) return std::numeric_limits<double>::infinity();
    return std::exp(-log_prob(model, tokens) / static_cast<double>(tokens.size()));
}

inline double perplexity_normalized(const NGramModel& model, std::string_view text) {
    return perplexity_normalized(model, lm_tokenize(text));
}

/// Kept iff perplexity <= threshold; only scores strictly above it are rejected.
inline bool passes_perplexity(double perplexity, const PerplexityFilterConfig& config) {
    return perplexity <= config.threshold;
}

struct PerplexityPartition {
    std::vector<CleanDocument> kept;
    std::vector<CleanDocument> rejected;
};

/// Keeps a document iff its per-token perplexity is <= threshold. Scoring
/// errors become rejections with reason "scoring-error".
inline PerplexityPartition filter_by_perplexity(std::vector<CleanDocument> docs, const NGramModel& model,
                                                const PerplexityFilterConfig& config, unsigned workers = 1) {
    config.validate();
    std::vector<double> scores(docs.size());
    std::vector<std::string> errors(docs.size());
    parallel_for(docs.size(), workers, [&](std::size_t i) {
        try {
            scores[i] = perplexity_normalized(model, docs[i].text);
        } catch (const std::exception& e) {
            errors[i] = e.what();
            scores[i] = std::numeric_limits<double>::quiet_NaN();
        }
    });
    PerplexityPartition out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        CleanDocument& d = docs[i];
        d.record_step(Step::Perplexity);
        if (!errors[i].empty()) {
            d.reject("scoring-error", errors[i]);
            out.rejected.push_back(std::move(d));
            continue;
        }
        if (std::isfinite(scores[i])) d.normalized_perplexity = scores[i];
        if (passes_perplexity(scores[i], config)) {
            out.kept.push_back(std::move(d));
        } else {
            std::ostringstream os;
            os.precision(17);
            os << scores[i];
            d.reject("perplexity", os.str());
            out.rejected.push_back(std::move(d));
        }
    }
    return out;
}

}  // namespace lexcorpus
