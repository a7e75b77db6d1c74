#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexcorpus/errors.hpp"
#include "lexcorpus/tokenizer.hpp"

namespace lexcorpus {

inline constexpr std::size_t kDefaultSeqLen = 8192;

/// Splits into consecutive views of `max_len`; the last holds the remainder.
inline std::vector<std::span<const TokenId>> chunk_document(std::span<const TokenId> tokens,
                                                            std::size_t max_len = kDefaultSeqLen) {
    if (max_len == 0) throw std::invalid_argument("chunk length must be >= 1");
    std::vector<std::span<const TokenId>> chunks;
    for (std::size_t off = 0; off < tokens.size(); off += max_len) {
        chunks.push_back(tokens.subspan(off, std::min(max_len, tokens.size() - off)));
    }
    return chunks;
}

/// Provenance of one document chunk inside a packed example. `start`/`end`
/// are positions in the example; `doc_offset` is where the chunk begins in
/// its source document.
struct Segment {
    std::string doc_id;
    std::string source;
    std::size_t doc_offset = 0;
    std::size_t start = 0;
    std::size_t end = 0;

    friend bool operator==(const Segment&, const Segment&) = default;
};

struct PackedExample {
    std::vector<TokenId> tokens;
    std::vector<Segment> segments;
    std::size_t pad_count = 0;

    [[nodiscard]] std::size_t separator_count() const { return segments.empty() ? 0 : segments.size() - 1; }

    friend bool operator==(const PackedExample&, const PackedExample&) = default;
};

/// Streaming greedy packer: documents are appended in arrival order, with one
/// separator between neighbours, while they fit; otherwise the current example
/// is padded out and a new one begins.
class Packer {
public:
    Packer(std::size_t seq_len, TokenId separator, TokenId pad) : seq_len_(seq_len), sep_(separator), pad_(pad) {
        if (seq_len == 0) throw std::invalid_argument("seq_len must be >= 1");
    }

    /// Adds a chunk of at most seq_len tokens. Returns a finished example when
    /// the chunk did not fit into the open one.
    std::optional<PackedExample> push(std::span<const TokenId> chunk, std::string doc_id, std::string source,
                                      std::size_t doc_offset = 0) {
        if (chunk.size() > seq_len_) throw std::invalid_argument("chunk longer than seq_len; chunk documents first");
        if (chunk.empty()) return std::nullopt;
        std::optional<PackedExample> done;
        const std::size_t need = current_.tokens.empty() ? chunk.size() : current_.tokens.size() + 1 + chunk.size();
        if (need > seq_len_) {
            done = finish_current();
        }
        if (!current_.tokens.empty()) current_.tokens.push_back(sep_);
        const std::size_t start = current_.tokens.size();
        current_.tokens.insert(current_.tokens.end(), chunk.begin(), chunk.end());
        current_.segments.push_back({std::move(doc_id), std::move(source), doc_offset, start, current_.tokens.size()});
        return done;
    }

    /// Emits the open example, if any.
    std::optional<PackedExample> flush() {
        if (current_.tokens.empty()) return std::nullopt;
        return finish_current();
    }

    [[nodiscard]] std::size_t seq_len() const noexcept { return seq_len_; }

private:
    PackedExample finish_current() {
        PackedExample ex = std::move(current_);
        current_ = PackedExample{};
        ex.pad_count = seq_len_ - ex.tokens.size();
        ex.tokens.resize(seq_len_, pad_);
        return ex;
    }

    std::size_t seq_len_;
    TokenId sep_;
    TokenId pad_;
    PackedExample current_;
};

/// Packs pre-chunked documents (each <= seq_len) in stream order.
inline std::vector<PackedExample> pack_examples(const std::vector<TokenSequence>& docs, const Tokenizer& tok,
                                                std::size_t seq_len = kDefaultSeqLen) {
    Packer packer(seq_len, tok.separator_id(), tok.pad_id());
    std::vector<PackedExample> out;
    for (const auto& d : docs) {
        if (auto ex = packer.push(d.tokens, d.doc_id, d.source)) out.push_back(std::move(*ex));
    }
    if (auto ex = packer.flush()) out.push_back(std::move(*ex));
    return out;
}

/// Tokenizes, chunks and packs whole documents.
struct DocumentText {
    std::string id;
    std::string source;
    std::string text;
};

inline std::vector<PackedExample> pack_documents(const std::vector<DocumentText>& docs, const Tokenizer& tok,
                                                 std::size_t seq_len = kDefaultSeqLen) {
    Packer packer(seq_len, tok.separator_id(), tok.pad_id());
    std::vector<PackedExample> out;
    for (const auto& d : docs) {
        const auto ids = tok.encode(d.text);
        std::size_t off = 0;
        for (auto chunk : chunk_document(ids, seq_len)) {
            if (auto ex = packer.push(chunk, d.id, d.source, off)) out.push_back(std::move(*ex));
            off += chunk.size();
        }
    }
    if (auto ex = packer.flush()) out.push_back(std::move(*ex));
    return out;
}

// ---------------------------------------------------------------------------
// Shard files: little-endian u32 ids, fixed seq_len records, plus a
// newline-delimited sidecar index with one provenance record per example.

inline std::string encode_example_le(const PackedExample& ex) {
    std::string out;
    out.resize(ex.tokens.size() * 4);
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
        const TokenId t = ex.tokens[i];
        out[4 * i + 0] = static_cast<char>(t & 0xff);
        out[4 * i + 1] = static_cast<char>((t >> 8) & 0xff);
        out[4 * i + 2] = static_cast<char>((t >> 16) & 0xff);
        out[4 * i + 3] = static_cast<char>((t >> 24) & 0xff);
    }
    return out;
}

inline nlohmann::json index_record(const PackedExample& ex, std::size_t index) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : ex.segments) {
        segs.push_back({{"doc", s.doc_id}, {"source", s.source}, {"doc_offset", s.doc_offset},
                        {"start", s.start}, {"end", s.end}});
    }
    return {{"index", index}, {"pad_count", ex.pad_count}, {"segments", segs}};
}

inline void write_shard(const std::string& bin_path, const std::string& index_path,
                        const std::vector<PackedExample>& examples) {
    std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
    std::ofstream idx(index_path, std::ios::binary | std::ios::trunc);
    if (!bin || !idx) throw IoError("cannot open shard files for writing at '" + bin_path + "'");
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto bytes = encode_example_le(examples[i]);
        bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        idx << index_record(examples[i], i).dump() << '\n';
    }
    if (!bin || !idx) throw IoError("write error on shard '" + bin_path + "'");
}

/// Reads back token rows of a shard written by write_shard.
inline std::vector<std::vector<TokenId>> read_shard_tokens(const std::string& bin_path, std::size_t seq_len) {
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw IoError("cannot open shard '" + bin_path + "'");
    std::vector<std::vector<TokenId>> rows;
    std::vector<unsigned char> buf(seq_len * 4);
    while (in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
        std::vector<TokenId> row(seq_len);
        for (std::size_t i = 0; i < seq_len; ++i) {
            row[i] = static_cast<TokenId>(buf[4 * i]) | (static_cast<TokenId>(buf[4 * i + 1]) << 8) |
                     (static_cast<TokenId>(buf[4 * i + 2]) << 16) | (static_cast<TokenId>(buf[4 * i + 3]) << 24);
        }
        rows.push_back(std::move(row));
    }
    if (in.gcount() != 0) throw FormatError("shard '" + bin_path + "' has a truncated record");
    return rows;
}

}  // namespace lexcorpus
