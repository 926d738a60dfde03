#include "histogen/textcond/tokenizer.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "histogen/core/errors.hpp"
#include "histogen/core/sha256.hpp"

namespace histogen::textcond {

namespace {

constexpr int kByteBase = 1;  // ids 1..256 are byte tokens

std::string byte_token_text(unsigned byte) {
    static const char* digits = "0123456789ABCDEF";
    std::string s = "<0x00>";
    s[3] = digits[(byte >> 4) & 0xf];
    s[4] = digits[byte & 0xf];
    return s;
}

// Returns byte value for "<0xNN>" tokens, -1 otherwise.
int parse_byte_token(const std::string& t) {
    if (t.size() != 6 || t.rfind("<0x", 0) != 0 || t[5] != '>') return -1;
    auto hex = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        return -1;
    };
    const int hi = hex(t[3]), lo = hex(t[4]);
    if (hi < 0 || lo < 0) return -1;
    return hi * 16 + lo;
}

}  // namespace

Tokenizer::Tokenizer(const std::string& vocab_path) {
    std::ifstream is(vocab_path);
    if (!is) throw IoError("cannot read vocabulary: " + vocab_path);
    Sha256 sha;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        sha.update(line);
        sha.update("\n");
        tokens_.push_back(line);
    }
    if (tokens_.size() < 257 || tokens_[0] != "<pad>") {
        throw ConfigError("vocabulary must start with <pad> followed by 256 byte tokens: " +
                          vocab_path);
    }
    for (int b = 0; b < 256; ++b) {
        if (tokens_[static_cast<std::size_t>(kByteBase + b)] != byte_token_text(static_cast<unsigned>(b))) {
            throw ConfigError("vocabulary byte token table is malformed at byte " +
                              std::to_string(b));
        }
    }
    for (std::size_t i = 257; i < tokens_.size(); ++i) {
        if (!lookup_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw ConfigError("duplicate vocabulary entry: " + tokens_[i]);
        }
        max_piece_len_ = std::max(max_piece_len_, tokens_[i].size());
    }
    vocab_sha_ = sha.hex_digest();
}

std::string Tokenizer::normalize(const std::string& text) const {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

TokenSequence Tokenizer::tokenize(const std::string& text) const {
    TokenSequence seq;
    const std::string norm = normalize(text);
    if (norm.empty()) return seq;

    std::istringstream words(norm);
    std::string word;
    while (words >> word) {
        const std::string marked = kWordMarker + word;
        std::size_t pos = 0;
        while (pos < marked.size()) {
            const std::size_t max_len = std::min(max_piece_len_, marked.size() - pos);
            int id = -1;
            for (std::size_t len = max_len; len >= 1; --len) {
                const auto it = lookup_.find(marked.substr(pos, len));
                if (it != lookup_.end()) {
                    id = it->second;
                    pos += len;
                    break;
                }
            }
            if (id < 0) {  // byte fallback
                id = kByteBase + static_cast<unsigned char>(marked[pos]);
                ++pos;
            }
            seq.ids.push_back(id);
        }
    }
    return seq;
}

std::string Tokenizer::detokenize(const TokenSequence& seq) const {
    std::string marked;
    for (int id : seq.ids) {
        if (id == pad_id()) continue;
        const std::string& t = token_text(id);
        const int byte = id >= kByteBase && id < kByteBase + 256 ? parse_byte_token(t) : -1;
        if (byte >= 0) {
            marked.push_back(static_cast<char>(byte));
        } else {
            marked += t;
        }
    }
    // Word markers become spaces; drop the leading one.
    std::string out;
    out.reserve(marked.size());
    std::size_t i = 0;
    const std::string marker = kWordMarker;
    while (i < marked.size()) {
        if (marked.compare(i, marker.size(), marker) == 0) {
            if (!out.empty()) out.push_back(' ');
            i += marker.size();
        } else {
            out.push_back(marked[i]);
            ++i;
        }
    }
    return out;
}

const std::string& Tokenizer::token_text(int id) const {
    if (id < 0 || id >= vocab_size()) {
        throw ConfigError("token id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

}  // namespace histogen::textcond
