#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lexcorpus/lexcorpus.hpp"

using namespace lexcorpus;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
}

std::string jsonl(const std::vector<json>& rows) {
    std::string s;
    for (const auto& r : rows) s += r.dump() + "\n";
    return s;
}

std::unique_ptr<TextClient> make_client(const std::string& config_path, bool stub_dialogue) {
    if (config_path.empty()) {
        if (stub_dialogue) return std::make_unique<TemplateClient>(stub_dialogue_generator());
        return nullptr;
    }
    return std::make_unique<HttpTextClient>(client_config_from_json(read_json_file(config_path)));
}

struct GlobalFlags {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    unsigned workers = 0;
    bool resume = false;
    bool dry_run = false;
};

PipelineConfig load_with_overrides(const GlobalFlags& g) {
    if (g.config.empty()) throw ConfigError("--config is required");
    auto cfg = load_pipeline_config(g.config);
    if (g.seed_set) cfg.seed = g.seed;
    if (g.workers > 0) cfg.workers = g.workers;
    return cfg;
}

std::vector<TaskScore> read_task_scores(const std::string& path) {
    const auto j = read_json_file(path);
    std::vector<TaskScore> out;
    for (const auto& t : j.is_object() ? j.at("tasks") : j) out.push_back(task_score_from_json(t));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Legal-domain corpus preparation toolkit"};
    app.require_subcommand(1);
    GlobalFlags g;
    auto add_globals = [&](CLI::App* sub) {
        sub->add_option("--config", g.config, "Pipeline config file");
        sub->add_option("--seed", g.seed, "Global seed")->each([&](const std::string&) { g.seed_set = true; });
        sub->add_option("--workers", g.workers, "Worker threads per stage");
    };

    // validate
    auto* validate = app.add_subcommand("validate", "Check a corpus file or a pipeline config");
    std::string validate_input;
    bool validate_json = false;
    validate->add_option("--input", validate_input, "Corpus file (newline-delimited JSON)");
    validate->add_flag("--json", validate_json, "Print the report as JSON");
    add_globals(validate);

    // plan / run
    auto* plan_cmd = app.add_subcommand("plan", "Print the stage plan without touching files");
    add_globals(plan_cmd);
    auto* run_cmd = app.add_subcommand("run", "Run the pipeline");
    add_globals(run_cmd);
    run_cmd->add_flag("--resume", g.resume, "Skip stages whose manifests verify");
    run_cmd->add_flag("--dry-run", g.dry_run, "Only print the plan");

    // score-lm
    auto* score = app.add_subcommand("score-lm", "Print per-document perplexity as id<TAB>score");
    std::string score_input, score_model, score_save;
    std::vector<std::string> score_train;
    int score_order = 3;
    score->add_option("--input", score_input, "Documents to score")->required();
    score->add_option("--model", score_model, "Serialized model");
    score->add_option("--train", score_train, "Train on these corpus files instead");
    score->add_option("--order", score_order, "Order when training");
    score->add_option("--save", score_save, "Save the trained model here");
    add_globals(score);

    // dedup-report
    auto* dedup = app.add_subcommand("dedup-report", "Cluster near-duplicates and print the cluster report");
    std::string dedup_input, dedup_cfg, dedup_out, dedup_kept;
    dedup->add_option("--input", dedup_input, "Documents")->required();
    dedup->add_option("--dedup-config", dedup_cfg, "Dedup config file");
    dedup->add_option("--out", dedup_out, "Cluster report path (default stdout)");
    dedup->add_option("--kept", dedup_kept, "Write surviving documents here");
    add_globals(dedup);

    // mix
    auto* mix = app.add_subcommand("mix", "Sample a token mix from documents");
    std::string mix_recipe = "table1", mix_bin, mix_idx, mix_plan_out;
    std::vector<std::string> mix_inputs;
    std::uint64_t mix_total = 0;
    std::size_t mix_seq = kDefaultSeqLen;
    bool mix_plan_only = false;
    mix->add_option("--recipe", mix_recipe, "Recipe file or built-in name (table1, annealing)");
    mix->add_option("--total", mix_total, "Total tokens")->required();
    mix->add_option("--input", mix_inputs, "Document files");
    mix->add_option("--seq-len", mix_seq, "Example length");
    mix->add_option("--out-bin", mix_bin, "Shard output");
    mix->add_option("--out-idx", mix_idx, "Shard index output");
    mix->add_option("--plan-out", mix_plan_out, "Write the sampling plan here");
    mix->add_flag("--plan-only", mix_plan_only, "Only print the sampling plan");
    add_globals(mix);

    // instruct
    auto* instruct = app.add_subcommand("instruct", "Curate or synthesize instruction data");
    instruct->require_subcommand(1);
    auto* curate = instruct->add_subcommand("curate", "Validate and deduplicate instruction files");
    std::vector<std::string> curate_inputs;
    std::string curate_out, curate_report, curate_dedup;
    curate->add_option("--input", curate_inputs, "Instruction files")->required();
    curate->add_option("--out", curate_out, "Curated records")->required();
    curate->add_option("--report", curate_report, "Retention report (JSON)");
    curate->add_option("--dedup-config", curate_dedup, "Dedup config file");
    add_globals(curate);
    auto* synth = instruct->add_subcommand("synth", "Generate multi-turn dialogues from documents");
    std::string synth_input, synth_out, synth_client;
    int synth_depth = 5;
    synth->add_option("--input", synth_input, "Documents with metadata")->required();
    synth->add_option("--out", synth_out, "Dialogue records")->required();
    synth->add_option("--depth", synth_depth, "Turns per dialogue");
    synth->add_option("--client", synth_client, "Generator client config (default: offline templates)");
    add_globals(synth);

    // prefs
    auto* prefs = app.add_subcommand("prefs", "Build preference pairs from judged candidates");
    std::string prefs_input, prefs_out, prefs_client;
    prefs->add_option("--input", prefs_input, "Records {prompt, candidates[, scores]}")->required();
    prefs->add_option("--out", prefs_out, "Preference pairs (default stdout)");
    prefs->add_option("--client", prefs_client, "Judge client config; otherwise recorded scores are used");
    add_globals(prefs);

    // eval
    auto* eval = app.add_subcommand("eval", "Score predictions with balanced accuracy");
    std::string eval_tasks, eval_preds, eval_json;
    eval->add_option("--tasks", eval_tasks, "Task file")->required();
    eval->add_option("--predictions", eval_preds, "Predictions {task, id, output}")->required();
    eval->add_option("--json", eval_json, "Write the structured report here");
    add_globals(eval);

    // report
    auto* report = app.add_subcommand("report", "Reports over finished artifacts");
    report->require_subcommand(1);
    auto* delta = report->add_subcommand("delta", "Per-category win/loss shares between two eval reports");
    std::string delta_a, delta_b;
    delta->add_option("a", delta_a, "Eval report of model A")->required();
    delta->add_option("b", delta_b, "Eval report of model B")->required();
    auto* stage_cfg = report->add_subcommand("stage-config", "Print training hyperparameters for a stage");
    std::string stage_name = "pretrain", profile = "medium";
    stage_cfg->add_option("--stage", stage_name, "pretrain | ift | dpo");
    stage_cfg->add_option("--profile", profile, "medium | large");
    auto* manifests = report->add_subcommand("manifests", "Summarize stage manifests of a workspace");
    add_globals(manifests);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfigError;
    }

    try {
        if (*validate) {
            if (!validate_input.empty()) {
                const auto docs = read_raw_documents(validate_input);
                const auto r = validate_corpus(docs);
                if (validate_json) {
                    std::cout << to_json(r).dump(2) << "\n";
                } else {
                    std::cout << r.documents << " documents, " << r.issues.size() << " issues, " << r.utf8_replacements
                              << " replaced bytes\n";
                    for (const auto& i : r.issues) std::cout << "  " << to_string(i.kind) << "  " << i.id << "\n";
                }
                return r.ok() ? 0 : 1;
            }
            const auto cfg = load_with_overrides(g);
            std::cout << "config ok: " << cfg.stages.size() << " stages\n";
            return 0;
        }
        if (*plan_cmd) {
            std::cout << format_plan(plan(load_with_overrides(g)));
            return 0;
        }
        if (*run_cmd) {
            const auto cfg = load_with_overrides(g);
            const auto r = run(cfg, RunOptions{g.resume, g.dry_run, &std::cerr});
            if (r.exit_code != 0) {
                std::cerr << "error: " << r.message << "\n";
                return r.exit_code;
            }
            if (!g.dry_run) {
                std::cout << "executed " << r.executed.size() << " stages, skipped " << r.skipped.size() << "\n";
                std::cout << "final " << r.final_hash() << "\n";
            }
            return 0;
        }
        if (*score) {
            NGramModel model = [&] {
                if (!score_model.empty()) return NGramModel::load(score_model);
                if (score_train.empty()) throw ConfigError("score-lm needs --model or --train");
                std::vector<std::string> texts;
                for (const auto& f : score_train) {
                    for (auto& d : read_raw_documents(f)) texts.push_back(std::move(d.text));
                }
                return train_ngram_lm_on_texts(texts, score_order, std::max(1u, g.workers));
            }();
            if (!score_save.empty()) model.save(score_save);
            for (const auto& d : read_raw_documents(score_input)) {
                std::printf("%s\t%.6f\n", d.id.c_str(), perplexity_normalized(model, d.text));
            }
            return 0;
        }
        if (*dedup) {
            const auto cfg = dedup_cfg.empty() ? DedupConfig{} : dedup_config_from_json(read_json_file(dedup_cfg));
            std::vector<CleanDocument> docs;
            for (const auto& d : read_raw_documents(dedup_input)) docs.push_back(CleanDocument::from_raw(d));
            auto part = dedup_documents(std::move(docs), cfg, std::max(1u, g.workers));
            write_or_print(dedup_out, format_cluster_report(part.clusters));
            if (!dedup_kept.empty()) write_jsonl(dedup_kept, part.kept);
            std::cerr << part.kept.size() << " kept, " << part.rejected.size() << " removed\n";
            return 0;
        }
        if (*mix) {
            MixRecipe recipe = mix_recipe == "table1"      ? table1_recipe()
                               : mix_recipe == "annealing" ? annealing_recipe()
                                                           : mix_recipe_from_json(read_json_file(mix_recipe));
            recipe.validate();
            ByteTokenizer tok;
            std::map<std::string, std::vector<TokenSequence>> shards;
            std::map<std::string, std::uint64_t> available;
            for (const auto& f : mix_inputs) {
                for (const auto& d : read_raw_documents(f)) {
                    available[d.source] += d.text.size();
                    shards[d.source].push_back(tokenize(tok, d.text, d.id, d.source));
                }
            }
            const auto plan =
                build_sampling_plan(recipe, mix_total, mix_inputs.empty() || recipe.allow_repetition ? nullptr : &available);
            if (!mix_plan_out.empty()) write_or_print(mix_plan_out, to_json(plan).dump(2) + "\n");
            if (mix_plan_only) {
                std::cout << to_json(plan).dump(2) << "\n";
                return 0;
            }
            const auto result = sample_mix(plan, shards, g.seed, tok, mix_seq);
            if (!mix_bin.empty()) write_shard(mix_bin, mix_idx.empty() ? mix_bin + ".idx.jsonl" : mix_idx, result.examples);
            for (const auto& [src, n] : result.realized_tokens) {
                std::printf("%s\t%llu\t%.6f\n", src.c_str(), static_cast<unsigned long long>(n),
                            static_cast<double>(n) / static_cast<double>(result.total()));
            }
            return 0;
        }
        if (*curate) {
            const auto cfg = curate_dedup.empty() ? DedupConfig{} : dedup_config_from_json(read_json_file(curate_dedup));
            const auto result = curate_instructions(curate_inputs, cfg, std::max(1u, g.workers));
            write_jsonl(curate_out, result.records);
            if (!curate_report.empty()) write_or_print(curate_report, to_json(result).dump(2) + "\n");
            for (const auto& [path, err] : result.file_errors) std::cerr << "warning: " << path << ": " << err << "\n";
            std::cerr << result.kept_total() << " records kept\n";
            return 0;
        }
        if (*synth) {
            auto client = make_client(synth_client, true);
            std::vector<CleanDocument> docs;
            for (const auto& d : read_raw_documents(synth_input)) docs.push_back(CleanDocument::from_raw(d));
            const unsigned in_flight =
                synth_client.empty() ? 1u : client_config_from_json(read_json_file(synth_client)).max_in_flight;
            const auto result = synth_dialogues(docs, synth_depth, *client, in_flight);
            write_jsonl(synth_out, result.records);
            for (const auto& [id, why] : result.skipped) std::cerr << "skipped " << id << ": " << why << "\n";
            return 0;
        }
        if (*prefs) {
            auto client = make_client(prefs_client, false);
            std::vector<json> out;
            std::size_t line = 0;
            for_each_jsonl(prefs_input, [&](const json& j, std::size_t, std::size_t) {
                ++line;
                const auto prompt = j.at("prompt").get<std::string>();
                const auto candidates = j.at("candidates").get<std::vector<std::string>>();
                std::unique_ptr<Judge> judge;
                if (client) {
                    judge = std::make_unique<LlmJudge>(*client);
                } else {
                    std::map<std::string, JudgeScores> recorded;
                    const auto& scores = j.at("scores");
                    if (scores.size() != candidates.size()) {
                        throw FormatError(prefs_input + ":" + std::to_string(line) + ": one score per candidate required");
                    }
                    for (std::size_t i = 0; i < candidates.size(); ++i) recorded[candidates[i]] = judge_scores_from_json(scores[i]);
                    judge = std::make_unique<FunctionJudge>(
                        [recorded](const std::string&, const std::string& r) { return recorded.at(r); });
                }
                out.push_back(to_json(build_preference_pair(prompt, candidates, *judge)));
            });
            write_or_print(prefs_out, jsonl(out));
            return 0;
        }
        if (*eval) {
            const auto tasks = load_tasks(eval_tasks);
            std::map<std::string, std::map<std::string, std::string>> preds;
            for_each_jsonl(eval_preds, [&](const json& j, std::size_t, std::size_t) {
                preds[j.at("task").get<std::string>()][j.at("id").get<std::string>()] = j.at("output").get<std::string>();
            });
            std::vector<TaskScore> scores;
            json skipped = json::array();
            for (const auto& t : tasks) {
                std::string warning;
                auto it = preds.find(t.id);
                const auto s = score_task(t, it == preds.end() ? std::map<std::string, std::string>{} : it->second, &warning);
                if (s) {
                    scores.push_back(*s);
                } else {
                    std::cerr << "warning: " << warning << "\n";
                    skipped.push_back(t.id);
                }
            }
            const auto summary = aggregate_categories(scores);
            std::cout << format_category_table(summary);
            if (!eval_json.empty()) {
                json tj = json::array();
                for (const auto& s : scores) tj.push_back(to_json(s));
                write_or_print(eval_json, json{{"tasks", tj}, {"summary", to_json(summary)}, {"skipped", skipped}}.dump(2) + "\n");
            }
            return 0;
        }
        if (*delta) {
            std::cout << format_delta_table(delta_table(read_task_scores(delta_a), read_task_scores(delta_b)));
            return 0;
        }
        if (*stage_cfg) {
            if (profile != "medium" && profile != "large") throw ConfigError("unknown profile '" + profile + "'");
            const auto c = emit_stage_config(training_stage_from_string(stage_name),
                                             profile == "medium" ? ModelProfile::Medium : ModelProfile::Large);
            std::cout << to_json(c).dump(2) << "\n";
            return 0;
        }
        if (*manifests) {
            const auto cfg = load_with_overrides(g);
            for (const auto& p : plan(cfg)) {
                const auto path = p.dir / "manifest.json";
                if (!fs::exists(path)) {
                    std::printf("%-12s  (not run)\n", p.name.c_str());
                    continue;
                }
                const auto m = load_manifest(path.string());
                std::printf("%-12s  in=%llu out=%llu rejected=%llu  %s  %s\n", p.name.c_str(),
                            static_cast<unsigned long long>(m.input_count), static_cast<unsigned long long>(m.output_count),
                            static_cast<unsigned long long>(m.rejected_count), m.output_hash.substr(0, 16).c_str(),
                            stage_is_current(p, cfg.seed) ? "ok" : "stale");
            }
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStageFailure;
    }
    return 0;
}
