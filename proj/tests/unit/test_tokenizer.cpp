#include <doctest.h>

#include <fstream>

#include "histogen/textcond/tokenizer.hpp"
#include "oracles.hpp"

using namespace histogen;
using namespace histogen::textcond;

namespace {

const char* kVocabPath = "data/vocab.txt";

const Tokenizer& tok() {
    static Tokenizer t(kVocabPath);
    return t;
}

std::vector<std::string> vocab_lines() {
    std::ifstream is(kVocabPath);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

}  // namespace

TEST_CASE("tokenizer basics") {
    CHECK(tok().count_tokens("") == 0);
    CHECK(tok().tokenize("   \t\n ").ids.empty());
    CHECK(tok().vocab_size() > 257);
    // ids stay within vocabulary range
    const TokenSequence seq = tok().tokenize("invasive ductal carcinoma with high TIL scores");
    for (int id : seq.ids) {
        CHECK(id >= 0);
        CHECK(id < tok().vocab_size());
    }
}

TEST_CASE("score clause counts exactly 4 tokens") {
    CHECK(tok().count_tokens("Low tumour; Low TIL;") == 4);
    CHECK(tok().count_tokens("High tumour; High TIL;") == 4);
    CHECK(tok().count_tokens("Low tumour; High TIL;") == 4);
}

TEST_CASE("round trip up to normalization") {
    const std::vector<std::string> samples = {
        "Invasive ductal carcinoma present.",
        "The  specimen\tshows   nests of cells",
        "UPPER lower MiXeD 123 !?;",
        "unusual-token zzgibberishqq 0x41",
        "unicode: \xC3\xA9\xC3\xA8 ok",  // bytes fall back but must round-trip
    };
    for (const auto& s : samples) {
        CHECK(tok().detokenize(tok().tokenize(s)) == tok().normalize(s));
    }
    // random ASCII property check
    Rng rng(123);
    for (int k = 0; k < 50; ++k) {
        std::string s;
        const int len = 1 + static_cast<int>(rng.uniform_index(60));
        for (int i = 0; i < len; ++i) {
            s.push_back(static_cast<char>(32 + rng.uniform_index(95)));
        }
        CHECK(tok().detokenize(tok().tokenize(s)) == tok().normalize(s));
    }
}

TEST_CASE("token counting is additive across a space boundary") {
    const std::vector<std::string> parts = {"invasive carcinoma", "low stroma density",
                                            "zq9 unknownword", "cells; with, punctuation!"};
    for (const auto& a : parts) {
        for (const auto& b : parts) {
            CHECK(tok().count_tokens(a + " " + b) ==
                  tok().count_tokens(a) + tok().count_tokens(b));
        }
    }
}

TEST_CASE("tokenizer matches the independent reference implementation") {
    const auto lines = vocab_lines();
    const std::vector<std::string> samples = {
        "Low tumour; Low TIL;",
        "invasive lobular carcinoma with dense stroma",
        "completely-unknown hyphenated-words and 12.5mm margins",
        "gpt summarized this report to 35 tokens",
        "byte fallback \xF0\x9F\x94\xAC test",
    };
    for (const auto& s : samples) {
        const TokenSequence ours = tok().tokenize(s);
        const std::vector<int> ref = oracles::tokenize_reference(s, lines);
        CHECK(ours.ids == ref);
    }
    Rng rng(77);
    for (int k = 0; k < 30; ++k) {
        std::string s;
        const int words = 1 + static_cast<int>(rng.uniform_index(12));
        for (int w = 0; w < words; ++w) {
            const int len = 1 + static_cast<int>(rng.uniform_index(10));
            for (int i = 0; i < len; ++i) {
                s.push_back(static_cast<char>('a' + rng.uniform_index(26)));
            }
            s.push_back(' ');
        }
        CHECK(tok().tokenize(s).ids == oracles::tokenize_reference(s, lines));
    }
}

TEST_CASE("154-token text measures 154") {
    // "cells" is a single vocabulary token; 154 repetitions -> 154 tokens
    std::string s;
    for (int i = 0; i < 154; ++i) s += "cells ";
    CHECK(tok().count_tokens(s) == 154);
}
