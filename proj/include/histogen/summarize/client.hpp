#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "histogen/core/errors.hpp"

namespace histogen::summarize {

// Client-side failure (network, malformed response, missing script entry).
// Retried by the summarization loop up to its attempt cap.
struct TransportError : Error {
    using Error::Error;
};

struct CompletionParams {
    std::string case_id;
    int token_budget = 0;
    int attempt = 1;  // 1-based
    int step = 0;     // position in the prompt chain
};

// Chat-completion-style backend. Implementations are swappable without
// touching pipeline logic; tests use the scripted mock, production runs can
// plug an OpenAI-compatible endpoint.
class CompletionClient {
public:
    virtual ~CompletionClient() = default;
    virtual std::string complete(const std::string& prompt, const CompletionParams& params) = 0;
    virtual std::string model_id() const = 0;

    int total_calls() const { return calls_.load(); }

protected:
    void count_call() { calls_.fetch_add(1); }

private:
    std::atomic<int> calls_{0};
};

// Deterministic scripted client: a JSON map case_id -> ordered list of canned
// responses. Responses are consumed in order across all calls for a case;
// once exhausted the last one repeats. The sentinel "<<TRANSPORT_ERROR>>"
// simulates a transport failure, and a missing case fails permanently.
class MockClient final : public CompletionClient {
public:
    explicit MockClient(std::map<std::string, std::vector<std::string>> responses,
                        std::string model_id = "mock");
    static std::map<std::string, std::vector<std::string>> load_script(const std::string& path);
    static std::unique_ptr<MockClient> from_script(const std::string& path) {
        return std::make_unique<MockClient>(load_script(path));
    }

    std::string complete(const std::string& prompt, const CompletionParams& params) override;
    std::string model_id() const override { return model_id_; }

    static constexpr const char* kTransportErrorSentinel = "<<TRANSPORT_ERROR>>";

private:
    std::map<std::string, std::vector<std::string>> responses_;
    std::map<std::string, std::size_t> cursor_;
    std::string model_id_;
    std::mutex mu_;
};

// Simple token-per-interval limiter shared by live API clients.
class RateLimiter {
public:
    explicit RateLimiter(std::chrono::milliseconds min_interval) : min_interval_(min_interval) {}
    void acquire();

private:
    std::chrono::milliseconds min_interval_;
    std::chrono::steady_clock::time_point last_{};
    std::mutex mu_;
};

struct OpenAIConfig {
    std::string base_url = "https://api.openai.com";
    std::string api_key_env = "OPENAI_API_KEY";
    std::string model = "gpt-3.5-turbo";
    int timeout_s = 60;
    int min_interval_ms = 0;
};

// Minimal chat-completions client for OpenAI-compatible endpoints. Never used
// by tests (they run against MockClient); provided so real summarization runs
// work out of the box.
std::unique_ptr<CompletionClient> make_openai_client(const OpenAIConfig& config);

}  // namespace histogen::summarize
