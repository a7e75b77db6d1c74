#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lexcorpus/errors.hpp"
#include "lexcorpus/hash.hpp"

namespace lexcorpus {

/// What a finished stage hands to the finalizer. `records` are the stage's
/// serialized outputs in canonical order.
struct StageResult {
    std::string stage;
    std::string config_digest;
    std::uint64_t input_count = 0;
    std::uint64_t rejected_count = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> records;
};

struct Manifest {
    std::string stage;
    std::string config_digest;
    std::uint64_t input_count = 0;
    std::uint64_t output_count = 0;
    std::uint64_t rejected_count = 0;
    std::string output_hash;
    std::uint64_t seed = 0;
    /// Short per-record digests; locate the first divergent record on mismatch.
    std::vector<std::string> record_digests;

    friend bool operator==(const Manifest&, const Manifest&) = default;
};

namespace detail {
inline std::string short_digest(std::string_view record) { return sha256_hex(record).substr(0, 16); }
}  // namespace detail

template <typename Range>
std::string hash_records(const Range& records) {
    Sha256 h;
    for (const auto& r : records) h.update_field(std::string_view(r));
    return h.hex_digest();
}

inline Manifest write_manifest(const StageResult& result) {
    Manifest m;
    m.stage = result.stage;
    m.config_digest = result.config_digest;
    m.input_count = result.input_count;
    m.output_count = result.records.size();
    m.rejected_count = result.rejected_count;
    m.seed = result.seed;
    m.output_hash = hash_records(result.records);
    m.record_digests.reserve(result.records.size());
    for (const auto& r : result.records) m.record_digests.push_back(detail::short_digest(r));
    return m;
}

struct VerifyResult {
    bool ok = false;
    std::optional<std::size_t> first_divergent;
    std::string message;

    explicit operator bool() const noexcept { return ok; }
};

inline VerifyResult verify_manifest(const Manifest& m, const std::vector<std::string>& outputs) {
    VerifyResult v;
    const std::size_t n = std::min(outputs.size(), m.record_digests.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (detail::short_digest(outputs[i]) != m.record_digests[i]) {
            v.first_divergent = i;
            v.message = "record " + std::to_string(i) + " differs";
            return v;
        }
    }
    if (outputs.size() != m.output_count || m.record_digests.size() != m.output_count) {
        v.first_divergent = n;
        v.message = "output count " + std::to_string(outputs.size()) + " != manifest " + std::to_string(m.output_count);
        return v;
    }
    if (hash_records(outputs) != m.output_hash) {
        v.message = "output hash mismatch";
        return v;
    }
    v.ok = true;
    return v;
}

inline nlohmann::json to_json(const Manifest& m) {
    return nlohmann::json{{"stage", m.stage},
                          {"config_digest", m.config_digest},
                          {"input_count", m.input_count},
                          {"output_count", m.output_count},
                          {"rejected_count", m.rejected_count},
                          {"output_hash", m.output_hash},
                          {"seed", m.seed},
                          {"record_digests", m.record_digests}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
    try {
        Manifest m;
        m.stage = j.at("stage").get<std::string>();
        m.config_digest = j.at("config_digest").get<std::string>();
        m.input_count = j.at("input_count").get<std::uint64_t>();
        m.output_count = j.at("output_count").get<std::uint64_t>();
        m.rejected_count = j.at("rejected_count").get<std::uint64_t>();
        m.output_hash = j.at("output_hash").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.record_digests = j.at("record_digests").get<std::vector<std::string>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed manifest: ") + e.what());
    }
}

inline void save_manifest(const Manifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest '" + path + "'");
    out << to_json(m).dump(1) << '\n';
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read manifest '" + path + "'");
    try {
        return manifest_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("malformed manifest '" + path + "': " + e.what());
    }
}

/// Lines of a text file, newline stripped.
inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(std::move(line));
    return lines;
}

/// Fixed-size binary records.
inline std::vector<std::string> read_fixed_records(const std::string& path, std::size_t record_bytes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string all = buf.str();
    if (record_bytes == 0 || all.size() % record_bytes != 0) {
        throw FormatError("'" + path + "' is not a whole number of " + std::to_string(record_bytes) + "-byte records");
    }
    std::vector<std::string> out;
    out.reserve(all.size() / record_bytes);
    for (std::size_t off = 0; off < all.size(); off += record_bytes) out.push_back(all.substr(off, record_bytes));
    return out;
}

}  // namespace lexcorpus
