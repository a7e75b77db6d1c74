#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexcorpus/corpus.hpp"
#include "lexcorpus/dedup.hpp"
#include "lexcorpus/errors.hpp"
#include "lexcorpus/extract.hpp"
#include "lexcorpus/hash.hpp"
#include "lexcorpus/manifest.hpp"
#include "lexcorpus/mix.hpp"
#include "lexcorpus/ngram_lm.hpp"
#include "lexcorpus/normalize.hpp"
#include "lexcorpus/pack.hpp"
#include "lexcorpus/parallel.hpp"
#include "lexcorpus/rules.hpp"
#include "lexcorpus/tokenizer.hpp"

namespace lexcorpus {

namespace fs = std::filesystem;

inline constexpr std::array<std::string_view, 7> kStageChain = {"ingest", "normalize", "rule-filter", "perplexity",
                                                                "dedup",  "pack",      "mix"};

inline int stage_rank(std::string_view name) {
    for (std::size_t i = 0; i < kStageChain.size(); ++i) {
        if (kStageChain[i] == name) return static_cast<int>(i);
    }
    return -1;
}

// ---------------------------------------------------------------------------
// Configuration

/// Replaces ${NAME} with the environment value; unset variables are an error.
inline std::string interpolate_env(std::string_view s) {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] == '$' && i + 1 < s.size() && s[i + 1] == '{') {
            const auto close = s.find('}', i + 2);
            if (close == std::string_view::npos) throw ConfigError("unterminated ${ in '" + std::string(s) + "'");
            const std::string name(s.substr(i + 2, close - i - 2));
            const char* v = std::getenv(name.c_str());
            if (!v) throw ConfigError("environment variable '" + name + "' is not set");
            out += v;
            i = close + 1;
            continue;
        }
        out.push_back(s[i++]);
    }
    return out;
}

inline void interpolate_env(nlohmann::json& j) {
    if (j.is_string()) {
        j = interpolate_env(j.get<std::string>());
    } else if (j.is_structured()) {
        for (auto& v : j) interpolate_env(v);
    }
}

struct StageSpec {
    std::string name;
    nlohmann::json config = nlohmann::json::object();
};

struct PipelineConfig {
    std::vector<StageSpec> stages;
    std::uint64_t seed = 0;
    fs::path workspace = "workspace";
    unsigned workers = 1;
    /// Relative paths inside stage configs resolve against this directory.
    fs::path base_dir = ".";
    nlohmann::json instruct = nlohmann::json::object();
    nlohmann::json eval = nlohmann::json::object();

    [[nodiscard]] const StageSpec* find(std::string_view name) const {
        for (const auto& s : stages) {
            if (s.name == name) return &s;
        }
        return nullptr;
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
    for (const auto& [k, v] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
            throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
        }
    }
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace detail

struct IngestConfig {
    std::vector<std::string> inputs;
    std::string format = "jsonl";
    std::string source;
    ExtractorConfig extractor;
};

inline IngestConfig ingest_config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"inputs", "format", "source", "extractor"}, "ingest");
    IngestConfig c;
    try {
        c.inputs = j.at("inputs").get<std::vector<std::string>>();
        c.format = j.value("format", c.format);
        c.source = j.value("source", c.source);
        if (auto it = j.find("extractor"); it != j.end()) {
            detail::check_keys(*it, {"command", "stderr_excerpt_bytes"}, "ingest.extractor");
            c.extractor.command = it->value("command", std::string());
            c.extractor.stderr_excerpt_bytes = it->value("stderr_excerpt_bytes", c.extractor.stderr_excerpt_bytes);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("ingest: ") + e.what());
    }
    if (c.inputs.empty()) throw ConfigError("ingest: no inputs");
    if (c.format != "jsonl") {
        const auto fmt = input_format_from_string(c.format);
        if (c.source.empty()) throw ConfigError("ingest: format '" + c.format + "' needs a 'source' name");
        if (fmt == InputFormat::External && c.extractor.command.empty()) {
            throw ConfigError("ingest: external format needs extractor.command");
        }
    }
    return c;
}

struct NormalizeConfig {
    bool nfkc = true;
    bool repair_lines = true;
};

inline NormalizeConfig normalize_config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"nfkc", "repair_lines"}, "normalize");
    NormalizeConfig c;
    try {
        c.nfkc = j.value("nfkc", c.nfkc);
        c.repair_lines = j.value("repair_lines", c.repair_lines);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("normalize: ") + e.what());
    }
    return c;
}

struct PerplexityStageConfig {
    int order = 3;
    PerplexityFilterConfig filter;
    std::string model;                   // pretrained model file; empty = train
    std::vector<std::string> reference;  // training corpus; empty = the stage input
};

inline PerplexityStageConfig perplexity_config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"order", "threshold", "model", "reference"}, "perplexity");
    PerplexityStageConfig c;
    try {
        c.order = j.value("order", c.order);
        c.filter.threshold = j.value("threshold", c.filter.threshold);
        c.model = j.value("model", c.model);
        c.reference = j.value("reference", c.reference);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("perplexity: ") + e.what());
    }
    if (c.order < 1 || c.order > 8) throw ConfigError("perplexity: order must be in [1, 8]");
    c.filter.validate();
    return c;
}

struct PackConfig {
    std::size_t seq_len = kDefaultSeqLen;
};

inline PackConfig pack_config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"seq_len"}, "pack");
    PackConfig c;
    try {
        c.seq_len = j.value("seq_len", c.seq_len);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("pack: ") + e.what());
    }
    if (c.seq_len == 0) throw ConfigError("pack: seq_len must be >= 1");
    return c;
}

struct MixStageConfig {
    MixRecipe recipe;
    std::optional<std::uint64_t> total_tokens;  // default: largest total the inputs can cover
    std::size_t seq_len = kDefaultSeqLen;
};

inline MixStageConfig mix_config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"recipe", "total_tokens", "seq_len"}, "mix");
    MixStageConfig c;
    try {
        const auto& r = j.at("recipe");
        if (r.is_string()) {
            const auto name = r.get<std::string>();
            if (name == "table1") {
                c.recipe = table1_recipe();
            } else if (name == "annealing") {
                c.recipe = annealing_recipe();
            } else {
                throw ConfigError("mix: unknown built-in recipe '" + name + "'");
            }
        } else {
            c.recipe = mix_recipe_from_json(r);
        }
        if (auto it = j.find("total_tokens"); it != j.end()) c.total_tokens = it->get<std::uint64_t>();
        c.seq_len = j.value("seq_len", c.seq_len);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mix: ") + e.what());
    }
    c.recipe.validate();
    if (c.seq_len == 0) throw ConfigError("mix: seq_len must be >= 1");
    return c;
}

/// Parses a stage config, throwing ConfigError on anything invalid.
inline void validate_stage_config(const StageSpec& s) {
    if (s.name == "ingest") {
        ingest_config_from_json(s.config);
    } else if (s.name == "normalize") {
        normalize_config_from_json(s.config);
    } else if (s.name == "rule-filter") {
        rule_set_from_json(s.config);
    } else if (s.name == "perplexity") {
        perplexity_config_from_json(s.config);
    } else if (s.name == "dedup") {
        dedup_config_from_json(s.config).validate();
    } else if (s.name == "pack") {
        pack_config_from_json(s.config);
    } else if (s.name == "mix") {
        mix_config_from_json(s.config);
    } else {
        throw ConfigError("unknown stage '" + s.name + "'");
    }
}

/// Stage list must follow the fixed chain; a stage may be left out but never
/// reordered or repeated.
inline void validate_stage_order(const std::vector<StageSpec>& stages) {
    if (stages.empty()) throw ConfigError("pipeline has no stages");
    for (const auto& s : stages) {
        if (stage_rank(s.name) < 0) throw ConfigError("unknown stage '" + s.name + "'");
    }
    for (std::size_t i = 1; i < stages.size(); ++i) {
        const auto& prev = stages[i - 1].name;
        const auto& cur = stages[i].name;
        if (stage_rank(cur) == stage_rank(prev)) throw ConfigError("stage '" + cur + "' listed twice");
        if (stage_rank(cur) < stage_rank(prev)) {
            throw ConfigError("stage '" + cur + "' must run before '" + prev + "'");
        }
    }
    if (stages.front().name != "ingest") {
        throw ConfigError("stage '" + stages.front().name + "' needs 'ingest' before it");
    }
}

inline PipelineConfig pipeline_config_from_json(nlohmann::json j, const fs::path& base_dir = ".") {
    detail::check_keys(j, {"stages", "seed", "workspace", "workers", "instruct", "eval"}, "pipeline");
    interpolate_env(j);
    PipelineConfig c;
    c.base_dir = base_dir;
    try {
        c.seed = j.value("seed", c.seed);
        c.workers = j.value("workers", c.workers);
        if (auto it = j.find("workspace"); it != j.end()) c.workspace = detail::resolve(base_dir, it->get<std::string>());
        c.instruct = j.value("instruct", c.instruct);
        c.eval = j.value("eval", c.eval);
        for (const auto& s : j.at("stages")) {
            StageSpec spec;
            if (s.is_string()) {
                spec.name = s.get<std::string>();
            } else {
                detail::check_keys(s, {"stage", "config"}, "stages[]");
                spec.name = s.at("stage").get<std::string>();
                spec.config = s.value("config", nlohmann::json::object());
            }
            c.stages.push_back(std::move(spec));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("pipeline: ") + e.what());
    }
    if (c.workers == 0) throw ConfigError("workers must be >= 1");
    validate_stage_order(c.stages);
    for (const auto& s : c.stages) validate_stage_config(s);
    if (const char* ws = std::getenv("LEXCORPUS_WORKSPACE"); ws && *ws) c.workspace = ws;
    return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return pipeline_config_from_json(std::move(j), fs::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Planning

struct PlannedStage {
    std::string name;
    nlohmann::json config;
    fs::path dir;
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    /// H(stage name, config, seed, previous digest).
    std::string config_digest;
};

inline std::vector<fs::path> stage_outputs(const std::string& name, const fs::path& dir) {
    if (name == "pack") return {dir / "shard.bin", dir / "shard.idx.jsonl"};
    if (name == "mix") return {dir / "mix.bin", dir / "mix.idx.jsonl", dir / "plan.json"};
    return {dir / "docs.jsonl", dir / "rejected.jsonl"};
}

/// Ordered stages with their input/output paths. Stages left out of the
/// config are skipped and the next stage reads the previous present one.
inline std::vector<PlannedStage> plan(const PipelineConfig& config) {
    validate_stage_order(config.stages);
    std::vector<PlannedStage> out;
    std::string prev_digest;
    for (const auto& s : config.stages) {
        PlannedStage p;
        p.name = s.name;
        p.config = s.config;
        char num[8];
        std::snprintf(num, sizeof num, "%02d-", stage_rank(s.name) + 1);
        p.dir = config.workspace / (num + s.name);
        if (s.name == "ingest") {
            for (const auto& in : ingest_config_from_json(s.config).inputs) p.inputs.push_back(detail::resolve(config.base_dir, in));
        } else {
            const auto& prev = out.back();
            p.inputs = {prev.outputs.front()};
            if (prev.name == "pack") p.inputs.push_back(prev.outputs[1]);
            // Without a pack stage the mix tokenizes the documents itself.
        }
        p.outputs = stage_outputs(s.name, p.dir);
        Sha256 h;
        h.update_field(s.name);
        h.update_field(s.config.dump());
        h.update_field(std::to_string(config.seed));
        h.update_field(prev_digest);
        p.config_digest = h.hex_digest();
        prev_digest = p.config_digest;
        out.push_back(std::move(p));
    }
    return out;
}

inline std::string format_plan(const std::vector<PlannedStage>& stages) {
    std::ostringstream os;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        os << i + 1 << ". " << s.name << "  [" << s.config_digest.substr(0, 12) << "]\n";
        for (const auto& in : s.inputs) os << "     in:  " << in.string() << '\n';
        for (const auto& o : s.outputs) os << "     out: " << o.string() << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Stage execution

namespace detail {

inline std::vector<std::string> serialize_docs(const std::vector<CleanDocument>& docs) {
    std::vector<std::string> lines;
    lines.reserve(docs.size());
    for (const auto& d : docs) lines.push_back(to_json(d).dump());
    return lines;
}

inline void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw IoError("write error on '" + path.string() + "'");
}

inline void write_text(const fs::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write error on '" + path.string() + "'");
}

/// Writes kept and rejected documents; returns the kept records.
inline std::vector<std::string> write_doc_outputs(const PlannedStage& p, const std::vector<CleanDocument>& kept,
                                                  const std::vector<CleanDocument>& rejected) {
    auto records = serialize_docs(kept);
    write_lines(p.outputs[0], records);
    write_lines(p.outputs[1], serialize_docs(rejected));
    return records;
}

inline std::vector<fs::path> list_files(const fs::path& p) {
    if (!fs::exists(p)) throw IoError("input '" + p.string() + "' does not exist");
    if (!fs::is_directory(p)) return {p};
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open '" + p.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline std::size_t record_bytes(std::size_t seq_len) { return seq_len * sizeof(TokenId); }

/// Rebuilds per-source token sequences from a packed shard and its index.
inline std::map<std::string, std::vector<TokenSequence>> sequences_from_shard(const fs::path& bin, const fs::path& idx,
                                                                              std::size_t seq_len,
                                                                              const Tokenizer& tok) {
    const auto rows = read_shard_tokens(bin.string(), seq_len);
    const auto index = read_lines(idx.string());
    if (rows.size() != index.size()) throw FormatError("shard '" + bin.string() + "' and its index disagree");
    std::map<std::string, std::vector<TokenSequence>> out;
    std::map<std::pair<std::string, std::string>, std::size_t> where;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto rec = nlohmann::json::parse(index[r]);
        for (const auto& seg : rec.at("segments")) {
            const auto source = seg.at("source").get<std::string>();
            const auto doc = seg.at("doc").get<std::string>();
            const auto start = seg.at("start").get<std::size_t>();
            const auto end = seg.at("end").get<std::size_t>();
            auto key = std::make_pair(source, doc);
            auto it = where.find(key);
            auto& list = out[source];
            if (it == where.end()) {
                it = where.emplace(key, list.size()).first;
                list.push_back(TokenSequence{doc, source, {}, tok.digest()});
            }
            auto& toks = list[it->second].tokens;
            toks.insert(toks.end(), rows[r].begin() + static_cast<std::ptrdiff_t>(start),
                        rows[r].begin() + static_cast<std::ptrdiff_t>(end));
        }
    }
    return out;
}

/// Largest total whose per-source quotas all fit in the available tokens.
inline std::uint64_t max_coverable_total(const MixRecipe& recipe, const std::map<std::string, std::uint64_t>& available) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : target_proportions(recipe)) {
        if (q.proportion <= 0.0) continue;
        auto it = available.find(q.name);
        const double have = it == available.end() ? 0.0 : static_cast<double>(it->second);
        best = std::min(best, have / q.proportion);
    }
    if (!std::isfinite(best)) return 0;
    // Leave headroom for largest-remainder rounding.
    const double n = static_cast<double>(target_proportions(recipe).size());
    return best > n ? static_cast<std::uint64_t>(best - n) : 0;
}

struct StageContext {
    std::uint64_t seed = 0;
    unsigned workers = 1;
    fs::path base_dir;
    std::ostream* log = nullptr;
};

inline StageResult run_ingest(const PlannedStage& p, const StageContext& ctx) {
    const auto cfg = ingest_config_from_json(p.config);
    std::vector<CleanDocument> docs;
    std::vector<CleanDocument> rejected;
    std::uint64_t inputs = 0;
    for (const auto& input : p.inputs) {
        for (const auto& file : list_files(input)) {
            if (cfg.format == "jsonl") {
                for (auto& raw : read_raw_documents(file.string())) docs.push_back(CleanDocument::from_raw(raw));
                continue;
            }
            CleanDocument d;
            d.source = cfg.source;
            d.id = fs::relative(file, fs::is_directory(input) ? input : input.parent_path()).replace_extension().generic_string();
            try {
                const auto bytes = read_file(file);
                d.text = utf8::sanitize(extract_text(bytes, input_format_from_string(cfg.format), cfg.extractor)).text;
            } catch (const ExtractionFailed& e) {
                d.reject("extraction-failed", e.what());
            }
            docs.push_back(std::move(d));
        }
    }
    inputs = docs.size();
    sort_canonical(docs);
    std::vector<CleanDocument> kept;
    std::set<std::pair<std::string, std::string>> seen;
    for (auto& d : docs) {
        d.record_step(Step::Ingest);
        if (!d.rejected && !seen.insert({d.source, d.id}).second) d.reject("duplicate-id");
        if (!d.rejected && d.text.find_first_not_of(" \t\r\n") == std::string::npos) d.reject("empty");
        (d.rejected ? rejected : kept).push_back(std::move(d));
    }
    StageResult r{p.name, p.config_digest, inputs, rejected.size(), ctx.seed, write_doc_outputs(p, kept, rejected)};
    return r;
}

inline StageResult run_normalize(const PlannedStage& p, const StageContext& ctx) {
    const auto cfg = normalize_config_from_json(p.config);
    auto docs = read_clean_documents(p.inputs[0].string());
    parallel_for(docs.size(), ctx.workers, [&](std::size_t i) {
        auto& d = docs[i];
        if (cfg.nfkc) d.text = normalize_nfkc(d.text);
        if (cfg.repair_lines) d.text = repair_lines(d.text);
    });
    for (auto& d : docs) d.record_step(Step::Normalize);
    return StageResult{p.name, p.config_digest, docs.size(), 0, ctx.seed, write_doc_outputs(p, docs, {})};
}

inline StageResult run_rule_filter(const PlannedStage& p, const StageContext& ctx) {
    const auto rules = rule_set_from_json(p.config);
    auto docs = read_clean_documents(p.inputs[0].string());
    // Counting barrier: corpus-wide repeated n-gram statistics first.
    const unsigned w = std::max(1u, std::min<unsigned>(ctx.workers, static_cast<unsigned>(std::max<std::size_t>(docs.size(), 1))));
    std::vector<RepeatedNgramStats> partial(w, RepeatedNgramStats(rules.repeated_ngram_len));
    parallel_for(w, w, [&](std::size_t k) {
        for (std::size_t i = k; i < docs.size(); i += w) partial[k].add_document(docs[i].text);
    });
    RepeatedNgramStats stats(rules.repeated_ngram_len);
    for (const auto& s : partial) stats.merge(s);
    const auto filter = NgramFilter::from_stats(stats, rules.repeated_ngram_min_count);

    std::vector<std::optional<FilterOutcome>> outcomes(docs.size());
    parallel_for(docs.size(), ctx.workers, [&](std::size_t i) { outcomes[i] = apply_rule_filters(std::move(docs[i]), rules, filter); });
    std::vector<CleanDocument> kept, rejected;
    for (auto& o : outcomes) {
        const bool emit = o->emitted();
        (emit ? kept : rejected).push_back(std::move(o->doc));
    }
    return StageResult{p.name, p.config_digest, docs.size(), rejected.size(), ctx.seed, write_doc_outputs(p, kept, rejected)};
}

inline StageResult run_perplexity(const PlannedStage& p, const StageContext& ctx) {
    const auto cfg = perplexity_config_from_json(p.config);
    auto docs = read_clean_documents(p.inputs[0].string());
    NGramModel model = [&] {
        if (!cfg.model.empty()) return NGramModel::load(resolve(ctx.base_dir, cfg.model).string());
        std::vector<std::string> texts;
        if (cfg.reference.empty()) {
            for (const auto& d : docs) texts.push_back(d.text);
        } else {
            for (const auto& ref : cfg.reference) {
                for (auto& raw : read_raw_documents(resolve(ctx.base_dir, ref).string())) texts.push_back(std::move(raw.text));
            }
        }
        return train_ngram_lm_on_texts(texts, cfg.order, ctx.workers);
    }();
    model.save((p.dir / "model.bin").string());
    const std::size_t n = docs.size();
    auto part = filter_by_perplexity(std::move(docs), model, cfg.filter, ctx.workers);
    std::string scores;
    for (const auto* set : {&part.kept, &part.rejected}) {
        for (const auto& d : *set) {
            std::ostringstream os;
            os.precision(10);
            os << d.id << '\t' << (d.normalized_perplexity ? *d.normalized_perplexity : std::numeric_limits<double>::infinity()) << '\n';
            scores += os.str();
        }
    }
    write_text(p.dir / "scores.tsv", scores);
    return StageResult{p.name, p.config_digest, n, part.rejected.size(), ctx.seed, write_doc_outputs(p, part.kept, part.rejected)};
}

inline StageResult run_dedup(const PlannedStage& p, const StageContext& ctx) {
    const auto cfg = dedup_config_from_json(p.config);
    auto docs = read_clean_documents(p.inputs[0].string());
    const std::size_t n = docs.size();
    auto part = dedup_documents(std::move(docs), cfg, ctx.workers);
    write_text(p.dir / "clusters.tsv", format_cluster_report(part.clusters));
    return StageResult{p.name, p.config_digest, n, part.rejected.size(), ctx.seed, write_doc_outputs(p, part.kept, part.rejected)};
}

inline std::vector<std::string> write_examples(const fs::path& bin, const fs::path& idx,
                                               const std::vector<PackedExample>& examples) {
    write_shard(bin.string(), idx.string(), examples);
    std::vector<std::string> records;
    records.reserve(examples.size());
    for (const auto& e : examples) records.push_back(encode_example_le(e));
    return records;
}

/// Packs each source separately (sources in canonical order) so every
/// example holds a single source.
inline StageResult run_pack(const PlannedStage& p, const StageContext& ctx) {
    const auto cfg = pack_config_from_json(p.config);
    auto docs = read_clean_documents(p.inputs[0].string());
    sort_canonical(docs);
    ByteTokenizer tok;
    std::vector<PackedExample> examples;
    std::size_t i = 0;
    while (i < docs.size()) {
        std::vector<DocumentText> group;
        const std::string source = docs[i].source;
        for (; i < docs.size() && docs[i].source == source; ++i) group.push_back({docs[i].id, docs[i].source, docs[i].text});
        auto packed = pack_documents(group, tok, cfg.seq_len);
        examples.insert(examples.end(), std::make_move_iterator(packed.begin()), std::make_move_iterator(packed.end()));
    }
    return StageResult{p.name, p.config_digest, docs.size(), 0, ctx.seed, write_examples(p.outputs[0], p.outputs[1], examples)};
}

inline StageResult run_mix(const PlannedStage& p, const StageContext& ctx) {
    const auto cfg = mix_config_from_json(p.config);
    ByteTokenizer tok;
    std::map<std::string, std::vector<TokenSequence>> shards;
    if (p.inputs.size() == 2) {
        shards = sequences_from_shard(p.inputs[0], p.inputs[1], cfg.seq_len, tok);
    } else {
        auto docs = read_clean_documents(p.inputs[0].string());
        sort_canonical(docs);
        for (const auto& d : docs) shards[d.source].push_back(tokenize(tok, d.text, d.id, d.source));
    }
    std::map<std::string, std::uint64_t> available;
    std::uint64_t input_docs = 0;
    for (const auto& [src, seqs] : shards) {
        input_docs += seqs.size();
        for (const auto& s : seqs) available[src] += s.tokens.size();
    }
    const std::uint64_t total = cfg.total_tokens ? *cfg.total_tokens : max_coverable_total(cfg.recipe, available);
    if (total == 0) throw PlanningError("mix: inputs cannot cover any tokens of the recipe");
    const auto plan = build_sampling_plan(cfg.recipe, total, cfg.recipe.allow_repetition ? nullptr : &available);
    const auto mixed = sample_mix(plan, shards, ctx.seed, tok, cfg.seq_len);
    auto plan_json = to_json(plan);
    plan_json["realized_tokens"] = mixed.realized_tokens;
    write_text(p.outputs[2], plan_json.dump(2) + "\n");
    return StageResult{p.name, p.config_digest, input_docs, 0, ctx.seed, write_examples(p.outputs[0], p.outputs[1], mixed.examples)};
}

inline std::size_t config_seq_len(const PlannedStage& p) {
    if (p.name == "pack") return pack_config_from_json(p.config).seq_len;
    return mix_config_from_json(p.config).seq_len;
}

/// Records a finished stage's outputs as read back from disk.
inline std::vector<std::string> read_stage_records(const PlannedStage& p) {
    if (p.name == "pack" || p.name == "mix") return read_fixed_records(p.outputs[0].string(), record_bytes(config_seq_len(p)));
    return read_lines(p.outputs[0].string());
}

}  // namespace detail

/// Content hash of files a stage reads from outside the workspace, so that
/// edited inputs invalidate a finished stage.
inline std::string external_input_digest(const PlannedStage& p, const fs::path& base_dir) {
    std::vector<fs::path> files;
    if (p.name == "ingest") {
        for (const auto& in : p.inputs) {
            for (auto& f : detail::list_files(in)) files.push_back(std::move(f));
        }
    } else if (p.name == "perplexity") {
        const auto cfg = perplexity_config_from_json(p.config);
        if (!cfg.model.empty()) files.push_back(detail::resolve(base_dir, cfg.model));
        for (const auto& r : cfg.reference) files.push_back(detail::resolve(base_dir, r));
    }
    if (files.empty()) return {};
    Sha256 h;
    for (const auto& f : files) {
        h.update_field(f.generic_string());
        h.update_field(detail::read_file(f));
    }
    return h.hex_digest();
}

inline StageResult execute_stage(const PlannedStage& p, const detail::StageContext& ctx) {
    fs::create_directories(p.dir);
    if (p.name == "ingest") return detail::run_ingest(p, ctx);
    if (p.name == "normalize") return detail::run_normalize(p, ctx);
    if (p.name == "rule-filter") return detail::run_rule_filter(p, ctx);
    if (p.name == "perplexity") return detail::run_perplexity(p, ctx);
    if (p.name == "dedup") return detail::run_dedup(p, ctx);
    if (p.name == "pack") return detail::run_pack(p, ctx);
    if (p.name == "mix") return detail::run_mix(p, ctx);
    throw ConfigError("unknown stage '" + p.name + "'");
}

/// A stage may be skipped when its manifest matches the planned digest and
/// seed and the outputs on disk still verify.
inline bool stage_is_current(const PlannedStage& p, std::uint64_t seed, std::string* why = nullptr) {
    const auto mpath = p.dir / "manifest.json";
    if (!fs::exists(mpath)) {
        if (why) *why = "no manifest";
        return false;
    }
    try {
        const auto m = load_manifest(mpath.string());
        if (m.config_digest != p.config_digest || m.seed != seed) {
            if (why) *why = "config changed";
            return false;
        }
        const auto v = verify_manifest(m, detail::read_stage_records(p));
        if (!v && why) *why = v.message;
        return v.ok;
    } catch (const std::exception& e) {
        if (why) *why = e.what();
        return false;
    }
}

struct RunOptions {
    bool resume = false;
    bool dry_run = false;
    std::ostream* log = nullptr;
};

struct RunReport {
    int exit_code = 0;
    std::vector<std::string> executed;
    std::vector<std::string> skipped;
    std::string message;
    std::vector<Manifest> manifests;

    /// Output hash of the last stage.
    [[nodiscard]] std::string final_hash() const { return manifests.empty() ? std::string() : manifests.back().output_hash; }
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitStageFailure = 1;
inline constexpr int kExitConfigError = 2;

/// Runs the planned stages in order. With `resume`, leading stages whose
/// manifests still verify are skipped; once a stage executes, every later
/// stage executes too. A failing stage's directory moves to failed/.
inline RunReport run(const PipelineConfig& config, const RunOptions& opts = {}) {
    RunReport report;
    std::vector<PlannedStage> stages;
    try {
        stages = plan(config);
    } catch (const ConfigError& e) {
        report.exit_code = kExitConfigError;
        report.message = e.what();
        return report;
    }
    auto log = [&](const std::string& line) {
        if (opts.log) *opts.log << line << '\n';
    };
    if (opts.dry_run) {
        if (opts.log) *opts.log << format_plan(stages);
        return report;
    }
    const detail::StageContext ctx{config.seed, config.workers, config.base_dir, opts.log};
    bool upstream_ran = !opts.resume;
    for (auto& p : stages) {
        try {
            if (const auto ext = external_input_digest(p, config.base_dir); !ext.empty()) {
                p.config_digest = sha256_hex(p.config_digest + ext);
            }
        } catch (const std::exception& e) {
            report.exit_code = kExitStageFailure;
            report.message = "stage '" + p.name + "': " + e.what();
            log(report.message);
            return report;
        }
        if (!upstream_ran) {
            std::string why;
            if (stage_is_current(p, config.seed, &why)) {
                report.skipped.push_back(p.name);
                report.manifests.push_back(load_manifest((p.dir / "manifest.json").string()));
                log("skip " + p.name + " (manifest verified)");
                continue;
            }
            log("rerun " + p.name + " (" + why + ")");
            upstream_ran = true;
        }
        const auto t0 = std::chrono::steady_clock::now();
        try {
            if (fs::exists(p.dir)) fs::remove_all(p.dir);
            auto result = execute_stage(p, ctx);
            auto m = write_manifest(result);
            save_manifest(m, (p.dir / "manifest.json").string());
            report.executed.push_back(p.name);
            report.manifests.push_back(std::move(m));
        } catch (const std::exception& e) {
            const auto failed = config.workspace / "failed" / p.dir.filename();
            std::error_code ec;
            fs::remove_all(failed, ec);
            fs::create_directories(failed.parent_path(), ec);
            if (fs::exists(p.dir)) fs::rename(p.dir, failed, ec);
            report.exit_code = dynamic_cast<const ConfigError*>(&e) ? kExitConfigError : kExitStageFailure;
            report.message = "stage '" + p.name + "' failed: " + e.what();
            log(report.message);
            return report;
        }
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
        const auto& m = report.manifests.back();
        log("ran  " + p.name + ": " + std::to_string(m.input_count) + " in, " + std::to_string(m.output_count) + " out, " +
            std::to_string(m.rejected_count) + " rejected (" + std::to_string(ms) + " ms)");
    }
    return report;
}

}  // namespace lexcorpus
