#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace histogen::textcond {

struct TokenSequence {
    std::vector<int> ids;
    std::size_t length() const { return ids.size(); }
};

// Conditioning tokenizer: lowercasing word-piece scheme with byte fallback.
//
// Vocabulary file: one token per line; line 0 is "<pad>", lines 1..256 the
// byte tokens <0x00>..<0xFF>, then pieces. Word-initial pieces carry a
// leading U+2581 marker, continuation pieces do not. Tokenization is greedy
// longest-match per word; unknown bytes fall back to byte tokens, so any
// input tokenizes and detokenizes back to its normalized form. This is the
// authoritative token accounting for summary budgets and window packing.
class Tokenizer {
public:
    explicit Tokenizer(const std::string& vocab_path);

    int vocab_size() const { return static_cast<int>(tokens_.size()); }
    int pad_id() const { return 0; }

    // Lowercase ASCII, collapse whitespace runs, trim.
    std::string normalize(const std::string& text) const;

    TokenSequence tokenize(const std::string& text) const;
    std::string detokenize(const TokenSequence& seq) const;
    int count_tokens(const std::string& text) const {
        return static_cast<int>(tokenize(text).ids.size());
    }

    const std::string& token_text(int id) const;

    // Content hash of the vocabulary, logged into checkpoints so encoder and
    // sampler configurations can be cross-checked.
    const std::string& vocab_sha() const { return vocab_sha_; }

    static constexpr const char* kWordMarker = "\xE2\x96\x81";  // U+2581

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> lookup_;
    std::size_t max_piece_len_ = 1;
    std::string vocab_sha_;
};

}  // namespace histogen::textcond
