#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lexcorpus/hash.hpp"

namespace lexcorpus {

using TokenId = std::uint32_t;

/// Pluggable tokenizer interface for packing. Implementations must be
/// deterministic and expose dedicated separator and pad ids.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    [[nodiscard]] virtual std::vector<TokenId> encode(std::string_view text) const = 0;
    [[nodiscard]] virtual std::string decode(std::span<const TokenId> ids) const = 0;
    [[nodiscard]] virtual TokenId separator_id() const = 0;
    [[nodiscard]] virtual TokenId pad_id() const = 0;
    [[nodiscard]] virtual std::string digest() const = 0;
};

/// One id per byte (0..255) plus separator (256) and pad (257).
class ByteTokenizer final : public Tokenizer {
public:
    static constexpr TokenId kSeparator = 256;
    static constexpr TokenId kPad = 257;

    [[nodiscard]] std::vector<TokenId> encode(std::string_view text) const override {
        std::vector<TokenId> out;
        out.reserve(text.size());
        for (unsigned char c : text) out.push_back(c);
        return out;
    }

    [[nodiscard]] std::string decode(std::span<const TokenId> ids) const override {
        std::string out;
        out.reserve(ids.size());
        for (TokenId t : ids) {
            if (t < 256) out.push_back(static_cast<char>(t));
        }
        return out;
    }

    [[nodiscard]] TokenId separator_id() const override { return kSeparator; }
    [[nodiscard]] TokenId pad_id() const override { return kPad; }
    [[nodiscard]] std::string digest() const override { return sha256_hex("byte-level-v1;sep=256;pad=257"); }
};

struct TokenSequence {
    std::string doc_id;
    std::string source;
    std::vector<TokenId> tokens;
    std::string tokenizer_digest;
};

inline TokenSequence tokenize(const Tokenizer& tok, std::string_view text, std::string doc_id = {},
                              std::string source = {}) {
    return TokenSequence{std::move(doc_id), std::move(source), tok.encode(text), tok.digest()};
}

}  // namespace lexcorpus
