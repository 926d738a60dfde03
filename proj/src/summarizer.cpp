#include "histogen/summarize/summarizer.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <json.hpp>

#include "histogen/core/sha256.hpp"
#include "histogen/corpus/caption.hpp"

namespace histogen::summarize {

using nlohmann::json;
namespace fs = std::filesystem;

MockClient::MockClient(std::map<std::string, std::vector<std::string>> responses,
                       std::string model_id)
    : responses_(std::move(responses)), model_id_(std::move(model_id)) {}

std::map<std::string, std::vector<std::string>> MockClient::load_script(
    const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read mock script: " + path);
    json j = json::parse(is);
    std::map<std::string, std::vector<std::string>> responses;
    for (const auto& [k, v] : j.items()) {
        responses[k] = v.get<std::vector<std::string>>();
    }
    return responses;
}

std::string MockClient::complete(const std::string&, const CompletionParams& params) {
    count_call();
    std::lock_guard lock(mu_);
    const auto it = responses_.find(params.case_id);
    if (it == responses_.end() || it->second.empty()) {
        throw TransportError("mock script has no responses for case '" + params.case_id + "'");
    }
    auto& cur = cursor_[params.case_id];
    const std::string& r = it->second[std::min(cur, it->second.size() - 1)];
    ++cur;
    if (r == kTransportErrorSentinel) throw TransportError("scripted transport error");
    return r;
}

void RateLimiter::acquire() {
    if (min_interval_.count() <= 0) return;
    std::unique_lock lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    const auto earliest = last_ + min_interval_;
    if (now < earliest) {
        std::this_thread::sleep_for(earliest - now);
        last_ = earliest;
    } else {
        last_ = now;
    }
}

RetriesExhausted::RetriesExhausted(const std::string& case_id, std::vector<AttemptRecord> t)
    : Error("all attempts exhausted for case '" + case_id + "' (" + std::to_string(t.size()) +
            " attempts)"),
      transcript(std::move(t)) {}

namespace {

json result_to_json(const std::string& key, const SummaryResult& r) {
    return json{{"key", key},
                {"case_id", r.case_id},
                {"summary", r.summary},
                {"measured_tokens", r.measured_tokens},
                {"attempts", r.attempts},
                {"model_id", r.model_id},
                {"truncated", r.truncated}};
}

SummaryResult result_from_json(const json& j) {
    SummaryResult r;
    r.case_id = j.at("case_id").get<std::string>();
    r.summary = j.at("summary").get<std::string>();
    r.measured_tokens = j.at("measured_tokens").get<int>();
    r.attempts = j.at("attempts").get<int>();
    r.model_id = j.at("model_id").get<std::string>();
    r.truncated = j.value("truncated", false);
    return r;
}

}  // namespace

SummaryCache::SummaryCache(const std::string& path) : path_(path) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    std::ifstream is(path);
    if (!is) return;  // fresh cache
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        entries_[j.at("key").get<std::string>()] = result_from_json(j);
    }
}

std::optional<SummaryResult> SummaryCache::get(const std::string& key) const {
    std::lock_guard lock(mu_);
    const auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    SummaryResult r = it->second;
    r.cached = true;
    return r;
}

void SummaryCache::put(const std::string& key, const SummaryResult& result) {
    std::lock_guard lock(mu_);
    entries_[key] = result;
    std::ofstream os(path_, std::ios::app);
    if (!os) throw IoError("cannot append to summary cache: " + path_);
    os << result_to_json(key, result).dump() << '\n';
    os.flush();
}

std::string SummaryCache::key_for(const std::string& case_id, int budget,
                                  const std::string& model_id,
                                  const std::vector<std::string>& prompt_chain) {
    Sha256 h;
    h.update(case_id);
    h.update("\x1f");
    h.update(std::to_string(budget));
    h.update("\x1f");
    h.update(model_id);
    for (const auto& p : prompt_chain) {
        h.update("\x1f");
        h.update(p);
    }
    return h.hex_digest();
}

std::vector<std::string> load_prompt_chain(const std::string& prompt_dir) {
    if (!fs::is_directory(prompt_dir)) throw IoError("prompt directory not found: " + prompt_dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(prompt_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("prompt directory has no .txt templates: " + prompt_dir);
    std::vector<std::string> chain;
    for (const auto& f : files) {
        std::ifstream is(f);
        std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        chain.push_back(std::move(content));
    }
    return chain;
}

std::string render_prompt(const std::string& templ, int budget, const std::string& report) {
    std::string out;
    out.reserve(templ.size() + report.size());
    std::size_t i = 0;
    while (i < templ.size()) {
        if (templ.compare(i, 8, "{budget}") == 0) {
            out += std::to_string(budget);
            i += 8;
        } else if (templ.compare(i, 8, "{report}") == 0) {
            out += report;
            i += 8;
        } else {
            out.push_back(templ[i]);
            ++i;
        }
    }
    return out;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

SummaryResult summarize(const SummaryRequest& request, CompletionClient& client,
                        SummaryCache* cache, const textcond::Tokenizer& tokenizer,
                        bool truncate_fallback) {
    if (request.report_text.empty()) throw ConfigError("summarize: empty report_text");
    if (request.prompt_chain.empty()) throw ConfigError("summarize: empty prompt_chain");
    if (request.token_budget < 1) throw ConfigError("summarize: token_budget must be >= 1");

    const std::string key = SummaryCache::key_for(request.case_id, request.token_budget,
                                                  client.model_id(), request.prompt_chain);
    if (cache) {
        if (auto hit = cache->get(key)) return *hit;
    }

    std::vector<AttemptRecord> transcript;
    std::string last_over_budget;
    for (int attempt = 1; attempt <= request.max_retries + 1; ++attempt) {
        AttemptRecord rec;
        rec.attempt = attempt;
        std::string text = request.report_text;
        bool transport_failed = false;
        for (std::size_t step = 0; step < request.prompt_chain.size(); ++step) {
            const std::string prompt =
                render_prompt(request.prompt_chain[step], request.token_budget, text);
            CompletionParams params{request.case_id, request.token_budget, attempt,
                                    static_cast<int>(step)};
            try {
                text = client.complete(prompt, params);
            } catch (const TransportError& e) {
                rec.transport_error = true;
                rec.response_or_error = e.what();
                transport_failed = true;
                break;
            }
        }
        if (!transport_failed) {
            const std::string candidate = trim(text);
            rec.response_or_error = candidate;
            rec.measured_tokens = tokenizer.count_tokens(candidate);
            if (!candidate.empty() && rec.measured_tokens <= request.token_budget) {
                SummaryResult result;
                result.case_id = request.case_id;
                result.summary = candidate;
                result.measured_tokens = rec.measured_tokens;
                result.attempts = attempt;
                result.model_id = client.model_id();
                if (cache) cache->put(key, result);
                return result;
            }
            if (rec.measured_tokens > request.token_budget) last_over_budget = candidate;
        }
        transcript.push_back(std::move(rec));
    }

    // Over-budget responses regenerate rather than truncate by default:
    // truncation severs sentences and corrupts the condition.
    if (truncate_fallback && !last_over_budget.empty()) {
        textcond::TokenSequence seq = tokenizer.tokenize(last_over_budget);
        seq.ids.resize(static_cast<std::size_t>(request.token_budget));
        SummaryResult result;
        result.case_id = request.case_id;
        result.summary = tokenizer.detokenize(seq);
        result.measured_tokens = tokenizer.count_tokens(result.summary);
        result.attempts = request.max_retries + 1;
        result.model_id = client.model_id();
        result.truncated = true;
        if (cache) cache->put(key, result);
        return result;
    }

    throw RetriesExhausted(request.case_id, std::move(transcript));
}

CorpusSummaryReport summarize_corpus(corpus::Manifest& manifest,
                                     const CorpusSummarizeOptions& options,
                                     CompletionClient& client, SummaryCache* cache,
                                     const textcond::Tokenizer& tokenizer) {
    for (const auto& r : manifest.records) {
        if (r.report_text.empty()) {
            throw ConfigError("record '" + r.patch_id + "' has no report_text");
        }
    }

    // One summary per case, in first-appearance order.
    std::vector<std::string> cases;
    std::set<std::string> seen;
    std::map<std::string, std::string> report_by_case;
    for (const auto& r : manifest.records) {
        if (seen.insert(r.case_id).second) {
            cases.push_back(r.case_id);
            report_by_case[r.case_id] = r.report_text;
        }
    }

    struct CaseOutcome {
        bool ok = false;
        SummaryResult result;
        CaseFailure failure;
    };
    std::vector<CaseOutcome> outcomes(cases.size());

    const int width = std::max(1, std::min<int>(options.concurrency,
                                                static_cast<int>(cases.size())));
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cases.size()) return;
            SummaryRequest req;
            req.case_id = cases[i];
            req.report_text = report_by_case[cases[i]];
            req.token_budget = options.token_budget;
            req.prompt_chain = options.prompt_chain;
            req.max_retries = options.max_retries;
            try {
                outcomes[i].result =
                    summarize(req, client, cache, tokenizer, options.truncate_fallback);
                outcomes[i].ok = true;
            } catch (const RetriesExhausted& e) {
                outcomes[i].failure = {cases[i], static_cast<int>(e.transcript.size()), e.what()};
            } catch (const std::exception& e) {
                outcomes[i].failure = {cases[i], 0, e.what()};
            }
        }
    };
    if (width == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(width));
        for (int t = 0; t < width; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    CorpusSummaryReport report;
    report.cases_total = static_cast<int>(cases.size());
    std::map<std::string, std::string> summary_by_case;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        if (outcomes[i].ok) {
            summary_by_case[cases[i]] = outcomes[i].result.summary;
            if (outcomes[i].result.cached) ++report.cases_cached;
        } else {
            ++report.cases_failed;
            report.failures.push_back(outcomes[i].failure);
        }
    }

    for (auto& r : manifest.records) {
        const auto it = summary_by_case.find(r.case_id);
        if (it != summary_by_case.end()) {
            r.caption = corpus::compose_caption(it->second, r.tumor_label, r.til_label);
        }
    }
    return report;
}

}  // namespace histogen::summarize
