#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexcorpus/clients.hpp"
#include "lexcorpus/errors.hpp"

namespace lexcorpus {

/// Per-criterion judge scores, each in [0, 1].
struct JudgeScores {
    double factual_accuracy = 0.0;
    double relevance = 0.0;
    double logical_coherence = 0.0;

    /// Unweighted mean of the three criteria.
    [[nodiscard]] double aggregate() const { return (factual_accuracy + relevance + logical_coherence) / 3.0; }

    void validate() const {
        for (double v : {factual_accuracy, relevance, logical_coherence}) {
            if (!(v >= 0.0 && v <= 1.0)) throw ClientError("judge score outside [0, 1]");
        }
    }

    friend bool operator==(const JudgeScores&, const JudgeScores&) = default;
};

inline nlohmann::json to_json(const JudgeScores& s) {
    return {{"factual_accuracy", s.factual_accuracy}, {"relevance", s.relevance},
            {"logical_coherence", s.logical_coherence}};
}

inline JudgeScores judge_scores_from_json(const nlohmann::json& j) {
    try {
        JudgeScores s{j.at("factual_accuracy").get<double>(), j.at("relevance").get<double>(),
                      j.at("logical_coherence").get<double>()};
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ClientError(std::string("judge scores missing a criterion: ") + e.what());
    }
}

class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeScores score(const std::string& prompt, const std::string& response) = 0;
};

/// Judge backed by a function; used for recorded scores and tests.
class FunctionJudge final : public Judge {
public:
    explicit FunctionJudge(std::function<JudgeScores(const std::string&, const std::string&)> fn) : fn_(std::move(fn)) {}
    JudgeScores score(const std::string& prompt, const std::string& response) override {
        auto s = fn_(prompt, response);
        s.validate();
        return s;
    }

private:
    std::function<JudgeScores(const std::string&, const std::string&)> fn_;
};

/// Asks a text client to grade a response and parses the JSON object in its reply.
class LlmJudge final : public Judge {
public:
    explicit LlmJudge(TextClient& client) : client_(client) {}

    JudgeScores score(const std::string& prompt, const std::string& response) override {
        ClientRequest req;
        req.task = "judge";
        req.system =
            "You are an expert legal evaluator. Grade the response on factual accuracy, relevance and logical "
            "coherence, each between 0 and 1. Reply with a JSON object with keys factual_accuracy, relevance, "
            "logical_coherence.";
        req.prompt = "Question:\n" + prompt + "\n\nResponse:\n" + response;
        req.variables = {{"prompt", prompt}, {"response", response}};
        const std::string reply = client_.complete(req);
        const auto open = reply.find('{');
        const auto close = reply.rfind('}');
        if (open == std::string::npos || close == std::string::npos || close < open) {
            throw ClientError("judge reply has no JSON object");
        }
        try {
            return judge_scores_from_json(nlohmann::json::parse(reply.substr(open, close - open + 1)));
        } catch (const nlohmann::json::parse_error& e) {
            throw ClientError(std::string("judge reply is not valid JSON: ") + e.what());
        }
    }

private:
    TextClient& client_;
};

struct PreferencePair {
    std::string prompt;
    std::string chosen;
    std::string rejected;
    JudgeScores chosen_scores;
    JudgeScores rejected_scores;
};

inline nlohmann::json to_json(const PreferencePair& p) {
    return {{"prompt", p.prompt},
            {"chosen", p.chosen},
            {"rejected", p.rejected},
            {"judge_scores", {{"chosen", to_json(p.chosen_scores)}, {"rejected", to_json(p.rejected_scores)}}}};
}

/// Chosen = highest aggregate score, rejected = lowest; ties go to the
/// earlier candidate, and rejected is never the chosen index.
inline PreferencePair build_preference_pair(const std::string& prompt, const std::vector<std::string>& candidates,
                                            Judge& judge) {
    if (candidates.size() < 2) throw std::invalid_argument("need at least two candidate responses");
    std::vector<JudgeScores> scores;
    scores.reserve(candidates.size());
    for (const auto& c : candidates) scores.push_back(judge.score(prompt, c));
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        if (scores[i].aggregate() > scores[best].aggregate()) best = i;
    }
    std::optional<std::size_t> worst;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (i == best) continue;
        if (!worst || scores[i].aggregate() < scores[*worst].aggregate()) worst = i;
    }
    if (candidates[best] == candidates[*worst]) throw std::invalid_argument("chosen and rejected responses are identical");
    return PreferencePair{prompt, candidates[best], candidates[*worst], scores[best], scores[*worst]};
}

// ---------------------------------------------------------------------------
// DPO objective

struct DpoInputs {
    double policy_chosen = 0.0;
    double policy_rejected = 0.0;
    double reference_chosen = 0.0;
    double reference_rejected = 0.0;
};

struct DpoResult {
    double loss = 0.0;
    /// d loss / d (policy_chosen, policy_rejected, reference_chosen, reference_rejected)
    std::array<double, 4> gradient{};
};

/// loss = -log sigmoid(beta * [(pc - rc) - (pr - rr)]), evaluated as a stable softplus.
inline DpoResult dpo_objective(const DpoInputs& in, double beta = 0.1) {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
    const double margin = (in.policy_chosen - in.reference_chosen) - (in.policy_rejected - in.reference_rejected);
    const double z = beta * margin;
    // softplus(-z) and sigmoid(-z) without overflow.
    const double loss = z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    const double sig_neg = z > 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
    const double g = -beta * sig_neg;  // d loss / d margin
    return DpoResult{loss, {g, -g, -g, g}};
}

// ---------------------------------------------------------------------------
// Stage configs

enum class TrainingStage { Pretrain, Ift, Dpo };
enum class ModelProfile { Medium, Large };

struct StageConfig {
    TrainingStage stage = TrainingStage::Pretrain;
    std::string optimizer = "AdamW";
    double beta1 = 0.0;
    double beta2 = 0.0;
    double learning_rate = 0.0;
    int grad_accumulation = 1;
    int batch_size = 1;
    double epochs = 1.0;
};

inline TrainingStage training_stage_from_string(const std::string& s) {
    if (s == "pretrain") return TrainingStage::Pretrain;
    if (s == "ift") return TrainingStage::Ift;
    if (s == "dpo") return TrainingStage::Dpo;
    throw ConfigError("unknown training stage '" + s + "' (expected pretrain|ift|dpo)");
}

inline std::string_view to_string(TrainingStage s) {
    switch (s) {
        case TrainingStage::Pretrain: return "pretrain";
        case TrainingStage::Ift: return "ift";
        case TrainingStage::Dpo: return "dpo";
    }
    return "?";
}

/// Published hyperparameters per stage. Continued pretraining uses AdamW with
/// beta1 = 0.99, beta2 = 0.90 as stated (possibly transposed at the source);
/// IFT and DPO only publish a learning rate, the rest keep AdamW defaults.
inline StageConfig emit_stage_config(TrainingStage stage, ModelProfile profile = ModelProfile::Medium) {
    StageConfig c;
    c.stage = stage;
    c.batch_size = profile == ModelProfile::Medium ? 8 : 4;
    c.grad_accumulation = 4;
    switch (stage) {
        case TrainingStage::Pretrain:
            c.beta1 = 0.99;
            c.beta2 = 0.90;
            c.learning_rate = 2e-5;
            c.epochs = 1.0;
            break;
        case TrainingStage::Ift:
            c.beta1 = 0.9;
            c.beta2 = 0.999;
            c.learning_rate = 1e-5;
            c.epochs = 1.0;
            break;
        case TrainingStage::Dpo:
            c.beta1 = 0.9;
            c.beta2 = 0.999;
            c.learning_rate = 1e-6;
            c.epochs = 1.0;
            break;
    }
    return c;
}

inline nlohmann::json to_json(const StageConfig& c) {
    return {{"stage", std::string(to_string(c.stage))},
            {"optimizer", {{"name", c.optimizer}, {"beta1", c.beta1}, {"beta2", c.beta2}}},
            {"learning_rate", c.learning_rate},
            {"grad_accumulation", c.grad_accumulation},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs}};
}

}  // namespace lexcorpus
