#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "histogen/corpus/caption.hpp"
#include "histogen/summarize/summarizer.hpp"

using namespace histogen;
namespace sz = histogen::summarize;
using namespace histogen::summarize;
namespace fs = std::filesystem;

namespace {

const textcond::Tokenizer& tok() {
    static textcond::Tokenizer t("data/vocab.txt");
    return t;
}

std::string words(int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += (i ? " cells" : "cells");
    return s;
}

SummaryRequest request(const std::string& case_id, int budget, int max_retries) {
    SummaryRequest r;
    r.case_id = case_id;
    r.report_text = "long pathology report text";
    r.token_budget = budget;
    r.prompt_chain = {"Summarize in {budget} tokens: {report}"};
    r.max_retries = max_retries;
    return r;
}

std::string temp_cache(const std::string& name) {
    const auto p = fs::temp_directory_path() / name;
    fs::remove(p);
    return p.string();
}

}  // namespace

TEST_CASE("summarize: first valid response succeeds with attempts=1") {
    MockClient client({{"c1", {words(30)}}});
    const SummaryResult r = sz::summarize(request("c1", 35, 2), client, nullptr, tok());
    CHECK(r.attempts == 1);
    CHECK(r.measured_tokens == 30);
    CHECK(r.summary == words(30));
    CHECK(r.model_id == "mock");
    CHECK_FALSE(r.cached);
    CHECK(client.total_calls() == 1);
}

TEST_CASE("summarize: over-budget response triggers regeneration") {
    MockClient client({{"c1", {words(60), words(33)}}});
    const SummaryResult r = sz::summarize(request("c1", 35, 2), client, nullptr, tok());
    CHECK(r.attempts == 2);
    CHECK(r.measured_tokens == 33);
    CHECK(client.total_calls() == 2);
}

TEST_CASE("summarize: retries exhausted carries the attempt transcript") {
    MockClient client({{"c1", {words(200)}}});  // always 200 tokens
    try {
        sz::summarize(request("c1", 20, 2), client, nullptr, tok());
        FAIL("expected RetriesExhausted");
    } catch (const RetriesExhausted& e) {
        CHECK(e.transcript.size() == 3);  // max_retries + 1
        for (const auto& a : e.transcript) {
            CHECK(a.measured_tokens == 200);
            CHECK_FALSE(a.transport_error);
        }
    }
    CHECK(client.total_calls() == 3);
}

TEST_CASE("summarize: transport errors are retried up to the same cap") {
    MockClient client({{"c1", std::vector<std::string>{MockClient::kTransportErrorSentinel, words(10)}}});
    const SummaryResult ok = sz::summarize(request("c1", 20, 2), client, nullptr, tok());
    CHECK(ok.attempts == 2);

    MockClient dead({{"c1", std::vector<std::string>{MockClient::kTransportErrorSentinel}}});
    CHECK_THROWS_AS(sz::summarize(request("c1", 20, 1), dead, nullptr, tok()), RetriesExhausted);
    CHECK(dead.total_calls() == 2);
}

TEST_CASE("summarize: empty and invalid requests are rejected") {
    MockClient client({{"c1", {words(5)}}});
    SummaryRequest r = request("c1", 35, 1);
    r.report_text = "";
    CHECK_THROWS_AS(sz::summarize(r, client, nullptr, tok()), ConfigError);
    r = request("c1", 35, 1);
    r.prompt_chain.clear();
    CHECK_THROWS_AS(sz::summarize(r, client, nullptr, tok()), ConfigError);
    // empty responses count as invalid attempts
    MockClient empty({{"c1", {"", "", ""}}});
    CHECK_THROWS_AS(sz::summarize(request("c1", 35, 1), empty, nullptr, tok()), RetriesExhausted);
}

TEST_CASE("summarize: opt-in truncation fallback") {
    MockClient client({{"c1", {words(50)}}});
    const SummaryResult r =
        sz::summarize(request("c1", 10, 0), client, nullptr, tok(), /*truncate_fallback=*/true);
    CHECK(r.truncated);
    CHECK(r.measured_tokens <= 10);
    CHECK(tok().count_tokens(r.summary) == r.measured_tokens);
}

TEST_CASE("summarize: cache short-circuits client calls and persists on disk") {
    const std::string cache_path = temp_cache("histogen_sumcache.jsonl");
    {
        SummaryCache cache(cache_path);
        MockClient client({{"c1", {words(12)}}});
        const SummaryResult r = sz::summarize(request("c1", 20, 1), client, &cache, tok());
        CHECK_FALSE(r.cached);
        CHECK(client.total_calls() == 1);
        const SummaryResult r2 = sz::summarize(request("c1", 20, 1), client, &cache, tok());
        CHECK(r2.cached);
        CHECK(r2.summary == r.summary);
        CHECK(client.total_calls() == 1);  // no new call
    }
    // reload from disk: still zero calls
    SummaryCache cache(cache_path);
    CHECK(cache.size() == 1);
    MockClient client({{"c1", {words(99)}}});
    const SummaryResult r = sz::summarize(request("c1", 20, 1), client, &cache, tok());
    CHECK(r.cached);
    CHECK(client.total_calls() == 0);

    // different budget / model / prompts miss the cache
    CHECK(SummaryCache::key_for("c1", 20, "mock", {"p"}) !=
          SummaryCache::key_for("c1", 35, "mock", {"p"}));
    CHECK(SummaryCache::key_for("c1", 20, "mock", {"p"}) !=
          SummaryCache::key_for("c1", 20, "gpt", {"p"}));
    CHECK(SummaryCache::key_for("c1", 20, "mock", {"p"}) !=
          SummaryCache::key_for("c1", 20, "mock", {"q"}));
}

TEST_CASE("summarize: multi-step chains feed each completion into the next") {
    // repeat-last semantics: both steps return the scripted summary
    MockClient client({{"c1", {"intermediate notes", words(8)}}});
    SummaryRequest r = request("c1", 20, 0);
    r.prompt_chain = {"Extract: {report}", "Condense to {budget}: {report}"};
    const SummaryResult res = sz::summarize(r, client, nullptr, tok());
    CHECK(res.summary == words(8));
    CHECK(client.total_calls() == 2);
    CHECK(res.attempts == 1);
}

TEST_CASE("summarize_corpus fills captions and reports failures") {
    corpus::Manifest m;
    for (int c = 0; c < 5; ++c) {
        for (int p = 0; p < 2; ++p) {
            corpus::PatchRecord r;
            r.case_id = "case" + std::to_string(c);
            r.patch_id = r.case_id + "_p" + std::to_string(p);
            r.report_text = "report " + r.case_id;
            r.tumor_label = p % 2 ? corpus::ScoreLabel::High : corpus::ScoreLabel::Low;
            m.records.push_back(r);
        }
    }
    std::map<std::string, std::vector<std::string>> script;
    for (int c = 0; c < 5; ++c) script["case" + std::to_string(c)] = {words(10)};
    script.erase("case3");  // permanent failure for one case

    MockClient client(script);
    CorpusSummarizeOptions opt;
    opt.token_budget = 20;
    opt.max_retries = 1;
    opt.prompt_chain = {"{budget}: {report}"};
    const CorpusSummaryReport rep = summarize_corpus(m, opt, client, nullptr, tok());
    CHECK(rep.cases_total == 5);
    CHECK(rep.cases_failed == 1);
    REQUIRE(rep.failures.size() == 1);
    CHECK(rep.failures[0].case_id == "case3");

    int with_caption = 0;
    for (const auto& r : m.records) {
        if (r.case_id == "case3") {
            CHECK_FALSE(r.caption.has_value());
        } else {
            REQUIRE(r.caption.has_value());
            // caption = summary + exact clause strings
            CHECK(r.caption->find(words(10)) == 0);
            CHECK(r.caption->find(corpus::tumor_clause(r.tumor_label)) != std::string::npos);
            ++with_caption;
        }
    }
    CHECK(with_caption == 8);
}

TEST_CASE("summarize_corpus: warm cache issues zero client calls; output deterministic") {
    corpus::Manifest base;
    for (int c = 0; c < 4; ++c) {
        corpus::PatchRecord r;
        r.case_id = "k" + std::to_string(c);
        r.patch_id = r.case_id + "_p0";
        r.report_text = "report " + r.case_id;
        base.records.push_back(r);
    }
    std::map<std::string, std::vector<std::string>> script;
    for (int c = 0; c < 4; ++c) script["k" + std::to_string(c)] = {words(6)};

    const std::string cache_path = temp_cache("histogen_sumcache2.jsonl");
    SummaryCache cache(cache_path);
    CorpusSummarizeOptions opt;
    opt.token_budget = 20;
    opt.prompt_chain = {"{budget}: {report}"};
    opt.concurrency = 3;

    corpus::Manifest m1 = base;
    MockClient c1(script);
    summarize_corpus(m1, opt, c1, &cache, tok());
    CHECK(c1.total_calls() == 4);

    corpus::Manifest m2 = base;
    MockClient c2(script);
    const CorpusSummaryReport rep = summarize_corpus(m2, opt, c2, &cache, tok());
    CHECK(c2.total_calls() == 0);
    CHECK(rep.cases_cached == 4);

    // byte-identical captioned manifests across runs
    const auto dir = fs::temp_directory_path();
    corpus::save_manifest((dir / "m1.jsonl").string(), m1);
    corpus::save_manifest((dir / "m2.jsonl").string(), m2);
    std::ifstream f1(dir / "m1.jsonl"), f2(dir / "m2.jsonl");
    const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}

TEST_CASE("rate limiter enforces the minimum interval") {
    RateLimiter rl(std::chrono::milliseconds(25));
    const auto t0 = std::chrono::steady_clock::now();
    rl.acquire();
    rl.acquire();
    rl.acquire();
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - t0);
    CHECK(elapsed.count() >= 50);  // two enforced gaps

    RateLimiter off(std::chrono::milliseconds(0));
    const auto t1 = std::chrono::steady_clock::now();
    for (int i = 0; i < 100; ++i) off.acquire();
    CHECK(std::chrono::duration_cast<std::chrono::milliseconds>(
              std::chrono::steady_clock::now() - t1)
              .count() < 50);
}

TEST_CASE("prompt templates render budget and report placeholders") {
    CHECK(render_prompt("sum {budget} of {report}!", 35, "R") == "sum 35 of R!");
    CHECK(render_prompt("{report}{report}", 1, "ab") == "abab");
    CHECK(render_prompt("no placeholders", 1, "x") == "no placeholders");

    // repo prompt chain loads in order and carries both placeholders overall
    const auto chain = load_prompt_chain("prompts");
    REQUIRE(chain.size() == 3);
    CHECK(chain[0].find("{report}") != std::string::npos);
    CHECK(chain[2].find("{budget}") != std::string::npos);
}
