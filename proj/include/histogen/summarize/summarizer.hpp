#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "histogen/corpus/manifest.hpp"
#include "histogen/summarize/client.hpp"
#include "histogen/textcond/tokenizer.hpp"

namespace histogen::summarize {

// Token budgets are counted with the conditioning tokenizer: the budget
// exists to fit the 77-token embedding frames, so that tokenizer is
// authoritative.
struct SummaryRequest {
    std::string case_id;
    std::string report_text;
    int token_budget = 35;
    std::vector<std::string> prompt_chain;  // templates with {budget} / {report}
    int max_retries = 2;
};

struct SummaryResult {
    std::string case_id;
    std::string summary;
    int measured_tokens = 0;
    int attempts = 0;
    std::string model_id;
    bool cached = false;
    bool truncated = false;  // only with the opt-in truncation fallback
};

struct AttemptRecord {
    int attempt = 0;
    bool transport_error = false;
    std::string response_or_error;
    int measured_tokens = 0;
};

// All attempts invalid (over budget, empty, or client error).
struct RetriesExhausted : Error {
    RetriesExhausted(const std::string& case_id, std::vector<AttemptRecord> t);
    std::vector<AttemptRecord> transcript;
};

// On-disk key-value cache, one JSON line per entry, append-only so interrupted
// corpus runs resume without repeating paid API calls.
class SummaryCache {
public:
    explicit SummaryCache(const std::string& path);

    std::optional<SummaryResult> get(const std::string& key) const;
    void put(const std::string& key, const SummaryResult& result);
    std::size_t size() const { return entries_.size(); }

    static std::string key_for(const std::string& case_id, int budget, const std::string& model_id,
                               const std::vector<std::string>& prompt_chain);

private:
    std::string path_;
    std::map<std::string, SummaryResult> entries_;
    mutable std::mutex mu_;
};

std::vector<std::string> load_prompt_chain(const std::string& prompt_dir);
std::string render_prompt(const std::string& templ, int budget, const std::string& report);

// Runs the prompt chain (each step feeds the previous completion), validates
// the final summary against the token budget and regenerates on invalid
// responses. Cached results short-circuit before any client call.
SummaryResult summarize(const SummaryRequest& request, CompletionClient& client,
                        SummaryCache* cache, const textcond::Tokenizer& tokenizer,
                        bool truncate_fallback = false);

struct CaseFailure {
    std::string case_id;
    int attempts = 0;
    std::string error;
};

struct CorpusSummaryReport {
    int cases_total = 0;
    int cases_cached = 0;
    int cases_failed = 0;
    std::vector<CaseFailure> failures;
};

struct CorpusSummarizeOptions {
    int token_budget = 35;
    int max_retries = 2;
    int concurrency = 1;
    bool truncate_fallback = false;
    std::vector<std::string> prompt_chain;
};

// Summarizes one case at a time (bounded worker pool) and fills captions on
// every record of each summarized case. Failures land in the report instead
// of silently dropping records.
CorpusSummaryReport summarize_corpus(corpus::Manifest& manifest,
                                     const CorpusSummarizeOptions& options,
                                     CompletionClient& client, SummaryCache* cache,
                                     const textcond::Tokenizer& tokenizer);

}  // namespace histogen::summarize
