#pragma once

#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "lexcorpus/errors.hpp"

namespace lexcorpus {

/// Failure of a generator or judge call (transport, timeout, bad reply).
class ClientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A request to a text client. `task` names the step (e.g. "user-inquiry"),
/// `variables` carries structured inputs that templates and prompts refer to.
struct ClientRequest {
    std::string task;
    std::string system;
    std::string prompt;
    std::map<std::string, std::string> variables;
};

class TextClient {
public:
    virtual ~TextClient() = default;
    virtual std::string complete(const ClientRequest& request) = 0;
};

/// Replaces {name} placeholders from `vars`; unknown placeholders stay as-is.
inline std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            const auto close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                const std::string key(tmpl.substr(i + 1, close - i - 1));
                if (auto it = vars.find(key); it != vars.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i++]);
    }
    return out;
}

/// Deterministic offline client: one template per task, filled from the
/// request variables.
class TemplateClient final : public TextClient {
public:
    explicit TemplateClient(std::map<std::string, std::string> templates) : templates_(std::move(templates)) {}

    std::string complete(const ClientRequest& request) override {
        auto it = templates_.find(request.task);
        if (it == templates_.end()) throw ClientError("template client has no template for task '" + request.task + "'");
        return fill_template(it->second, request.variables);
    }

private:
    std::map<std::string, std::string> templates_;
};

struct ClientConfig {
    std::string endpoint = "http://127.0.0.1:8000";
    std::string path = "/v1/chat/completions";
    std::string model = "generator";
    double temperature = 0.0;
    double timeout_seconds = 60.0;
    int retries = 2;
    /// Environment variable holding the bearer credential, if any.
    std::string api_key_env = "LEXCORPUS_API_KEY";
    unsigned max_in_flight = 4;
};

inline ClientConfig client_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> kKeys = {"endpoint", "path",        "model",        "temperature",
                                                "timeout_seconds", "retries", "api_key_env", "max_in_flight"};
    for (const auto& [k, v] : j.items()) {
        if (!kKeys.count(k)) throw ConfigError("unknown client key '" + k + "'");
    }
    ClientConfig c;
    c.endpoint = j.value("endpoint", c.endpoint);
    c.path = j.value("path", c.path);
    c.model = j.value("model", c.model);
    c.temperature = j.value("temperature", c.temperature);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.retries = j.value("retries", c.retries);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    if (c.timeout_seconds <= 0 || c.retries < 0 || c.max_in_flight == 0) throw ConfigError("invalid client limits");
    return c;
}

/// OpenAI-style chat-completions client.
class HttpTextClient final : public TextClient {
public:
    explicit HttpTextClient(ClientConfig config) : config_(std::move(config)) {}

    std::string complete(const ClientRequest& request) override {
        nlohmann::json messages = nlohmann::json::array();
        if (!request.system.empty()) messages.push_back({{"role", "system"}, {"content", request.system}});
        messages.push_back({{"role", "user"}, {"content", request.prompt}});
        const nlohmann::json body{{"model", config_.model}, {"temperature", config_.temperature}, {"messages", messages}};

        httplib::Client cli(config_.endpoint);
        const auto secs = static_cast<time_t>(config_.timeout_seconds);
        const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
        cli.set_connection_timeout(secs, usecs);
        cli.set_read_timeout(secs, usecs);
        cli.set_write_timeout(secs, usecs);
        httplib::Headers headers;
        if (!config_.api_key_env.empty()) {
            if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
        }

        std::string last_error;
        for (int attempt = 0; attempt <= config_.retries; ++attempt) {
            if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 << std::min(attempt, 5)));
            auto res = cli.Post(config_.path, headers, body.dump(), "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500 || res->status == 429) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) throw ClientError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
            try {
                const auto reply = nlohmann::json::parse(res->body);
                return reply.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const nlohmann::json::exception& e) {
                throw ClientError(std::string("malformed completion reply: ") + e.what());
            }
        }
        throw ClientError("request failed after " + std::to_string(config_.retries + 1) + " attempts: " + last_error);
    }

    [[nodiscard]] const ClientConfig& config() const noexcept { return config_; }

private:
    ClientConfig config_;
};

}  // namespace lexcorpus
