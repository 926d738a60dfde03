#include <cstdlib>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "histogen/summarize/client.hpp"

namespace histogen::summarize {

namespace {

class OpenAIClient final : public CompletionClient {
public:
    explicit OpenAIClient(OpenAIConfig config)
        : config_(std::move(config)),
          limiter_(std::chrono::milliseconds(config_.min_interval_ms)) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        api_key_ = key ? key : "";
        if (api_key_.empty()) {
            throw ConfigError("environment variable " + config_.api_key_env +
                              " is not set; use --mock for scripted runs");
        }
    }

    std::string model_id() const override { return config_.model; }

    std::string complete(const std::string& prompt, const CompletionParams&) override {
        limiter_.acquire();
        count_call();

        nlohmann::json body{
            {"model", config_.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};

        httplib::Client http(config_.base_url);
        http.set_connection_timeout(config_.timeout_s);
        http.set_read_timeout(config_.timeout_s);
        httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
        auto res = http.Post("/v1/chat/completions", headers, body.dump(), "application/json");
        if (!res) {
            throw TransportError("request failed: " + httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            throw TransportError("HTTP " + std::to_string(res->status) + ": " + res->body);
        }
        try {
            nlohmann::json j = nlohmann::json::parse(res->body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("malformed completion response: ") + e.what());
        }
    }

private:
    OpenAIConfig config_;
    std::string api_key_;
    RateLimiter limiter_;
};

}  // namespace

std::unique_ptr<CompletionClient> make_openai_client(const OpenAIConfig& config) {
    return std::make_unique<OpenAIClient>(config);
}

}  // namespace histogen::summarize
