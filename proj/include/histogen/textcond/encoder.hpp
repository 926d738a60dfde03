#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "histogen/core/errors.hpp"
#include "histogen/core/rng.hpp"
#include "histogen/core/tensor.hpp"
#include "histogen/textcond/tokenizer.hpp"

namespace histogen::textcond {

inline constexpr Index kWindowLen = 77;  // CLIP-style embedding frame

enum class PositionalMode { Standard, Cyclic };

inline std::string to_string(PositionalMode m) {
    return m == PositionalMode::Standard ? "standard" : "cyclic";
}
inline PositionalMode positional_mode_from_string(const std::string& s) {
    if (s == "standard") return PositionalMode::Standard;
    if (s == "cyclic") return PositionalMode::Cyclic;
    throw ConfigError("invalid positional_mode '" + s + "'");
}

struct WindowedTokens {
    std::vector<std::vector<int>> windows;        // each exactly kWindowLen ids
    std::vector<std::vector<std::uint8_t>> mask;  // 1 = real token, 0 = padding
    int n_windows() const { return static_cast<int>(windows.size()); }
};

// Greedy fill into fixed 77-token windows; the final window is padded and the
// mask marks real tokens. Sequences beyond max_windows * 77 raise
// OverBudgetError naming the excess.
WindowedTokens window_split(const TokenSequence& seq, int max_windows, int pad_id);

// Per-window embedder. Frozen while the diffusion model trains; every
// operation is const and safe to call concurrently.
template <class S>
class TextEncoder {
public:
    virtual ~TextEncoder() = default;

    virtual Index d_embed() const = 0;
    virtual PositionalMode positional_mode() const = 0;
    // Stable identity string, logged into checkpoints for consistency checks.
    virtual std::string identity() const = 0;

    // (kWindowLen x d_embed) embedding of one window. window_index feeds the
    // positional rows in standard mode; cyclic mode reuses positions 0..76.
    virtual Tensor<S> embed_window(const std::vector<int>& window_ids, int window_index) const = 0;
};

// Seeded random embedding table plus sinusoidal positional rows. Deterministic
// and dependency-free; preserves the shape and locality properties of a
// CLIP-style encoder, which remains pluggable behind TextEncoder.
template <class S>
class ToyTextEncoder final : public TextEncoder<S> {
public:
    ToyTextEncoder(int vocab_size, Index d_embed, std::uint64_t seed, PositionalMode mode,
                   std::string vocab_sha)
        : d_(d_embed), mode_(mode), seed_(seed), vocab_sha_(std::move(vocab_sha)) {
        Rng rng(derive_seed(seed, "toy-text-encoder"));
        table_.resize({static_cast<Index>(vocab_size), d_});
        const double scale = 1.0 / std::sqrt(static_cast<double>(d_));
        for (Index i = 0; i < table_.size(); ++i) {
            table_[i] = static_cast<S>(scale * rng.normal());
        }
    }

    // Encoder with an externally supplied embedding table (weights file).
    ToyTextEncoder(Tensor<S> table, PositionalMode mode, std::string vocab_sha,
                   std::string weights_tag)
        : d_(table.dim(1)),
          mode_(mode),
          vocab_sha_(std::move(vocab_sha)),
          weights_tag_(std::move(weights_tag)),
          table_(std::move(table)) {}

    Index d_embed() const override { return d_; }
    PositionalMode positional_mode() const override { return mode_; }

    std::string identity() const override {
        const std::string source =
            weights_tag_.empty() ? "seed=" + std::to_string(seed_) : "weights=" + weights_tag_;
        return "toy(" + source + ",d=" + std::to_string(d_) +
               ",pos=" + to_string(mode_) + ",vocab=" + vocab_sha_.substr(0, 12) + ")";
    }

    Tensor<S> embed_window(const std::vector<int>& window_ids, int window_index) const override {
        if (static_cast<Index>(window_ids.size()) != kWindowLen) {
            throw ShapeError("embed_window expects exactly 77 ids");
        }
        Tensor<S> out({kWindowLen, d_});
        for (Index i = 0; i < kWindowLen; ++i) {
            const int id = window_ids[static_cast<std::size_t>(i)];
            if (id < 0 || id >= table_.dim(0)) {
                throw ShapeError("token id outside embedding table: " + std::to_string(id));
            }
            const Index pos =
                mode_ == PositionalMode::Cyclic ? i : window_index * kWindowLen + i;
            for (Index j = 0; j < d_; ++j) {
                out(i, j) = table_(static_cast<Index>(id), j) + positional(pos, j);
            }
        }
        return out;
    }

private:
    S positional(Index pos, Index j) const {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(2 * (j / 2)) /
                                     static_cast<double>(d_));
        const double angle = static_cast<double>(pos) * freq;
        return static_cast<S>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }

    Index d_;
    PositionalMode mode_;
    std::uint64_t seed_ = 0;
    std::string vocab_sha_;
    std::string weights_tag_;
    Tensor<S> table_;
};

// Tokenize, split into windows, embed each window independently and stack:
// window w occupies rows [77w, 77w+77). The context is always padded to
// exactly n_windows windows so cross-attention shapes stay constant across a
// training run.
template <class S>
Tensor<S> encode_condition(const std::string& text, const Tokenizer& tok,
                           const TextEncoder<S>& enc, int n_windows) {
    const TokenSequence seq = tok.tokenize(text);
    WindowedTokens wt = window_split(seq, n_windows, tok.pad_id());
    while (wt.n_windows() < n_windows) {
        wt.windows.emplace_back(static_cast<std::size_t>(kWindowLen), tok.pad_id());
        wt.mask.emplace_back(static_cast<std::size_t>(kWindowLen), std::uint8_t{0});
    }

    Tensor<S> ctx({static_cast<Index>(n_windows) * kWindowLen, enc.d_embed()});
    for (int w = 0; w < n_windows; ++w) {
        const Tensor<S> rows = enc.embed_window(wt.windows[static_cast<std::size_t>(w)], w);
        std::copy(rows.data(), rows.data() + rows.size(),
                  ctx.data() + static_cast<Index>(w) * kWindowLen * enc.d_embed());
    }
    return ctx;
}

// Embedding of the empty caption at the configured context length. Cache at
// the call site; construction is cheap but not free.
template <class S>
Tensor<S> null_condition(const Tokenizer& tok, const TextEncoder<S>& enc, int n_windows) {
    return encode_condition<S>("", tok, enc, n_windows);
}

}  // namespace histogen::textcond
