#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "histogen/core/serialize.hpp"
#include "histogen/core/sha256.hpp"
#include "histogen/textcond/encoder.hpp"

namespace histogen::textcond {

struct TextCondConfig {
    std::string vocab_path = "data/vocab.txt";
    Index d_embed = 64;
    int n_windows = 1;  // context_len = n_windows * 77, fixed per trained model
    PositionalMode positional_mode = PositionalMode::Standard;
    std::uint64_t encoder_seed = 7;
    std::string encoder_weights;  // optional serialized table; seed-derived otherwise

    Index context_len() const { return static_cast<Index>(n_windows) * kWindowLen; }

    nlohmann::json to_json() const {
        return {{"d_embed", d_embed},
                {"n_windows", n_windows},
                {"positional_mode", to_string(positional_mode)},
                {"encoder_seed", encoder_seed}};
    }
    static TextCondConfig from_json(const nlohmann::json& j) {
        TextCondConfig c;
        c.d_embed = j.value("d_embed", Index{64});
        c.n_windows = j.value("n_windows", 1);
        c.positional_mode = positional_mode_from_string(j.value("positional_mode", "standard"));
        c.encoder_seed = j.value("encoder_seed", std::uint64_t{7});
        return c;
    }
};

// Seed-derived table by default; cfg.encoder_weights points at a checkpoint
// container holding an "embedding_table" tensor to load instead.
template <class S>
std::unique_ptr<TextEncoder<S>> make_toy_encoder(const TextCondConfig& cfg,
                                                 const Tokenizer& tokenizer) {
    if (!cfg.encoder_weights.empty()) {
        Checkpoint ck = load_checkpoint(cfg.encoder_weights);
        const auto it = ck.tensors.find("embedding_table");
        if (it == ck.tensors.end()) {
            throw ConfigError("encoder weights file lacks 'embedding_table': " +
                              cfg.encoder_weights);
        }
        if (it->second.dim(0) != tokenizer.vocab_size() || it->second.dim(1) != cfg.d_embed) {
            throw ConfigError("encoder weights shape " + it->second.shape_str() +
                              " does not match vocab x d_embed");
        }
        return std::make_unique<ToyTextEncoder<S>>(
            tensor_cast<S>(it->second), cfg.positional_mode, tokenizer.vocab_sha(),
            sha256_file(cfg.encoder_weights).substr(0, 12));
    }
    return std::make_unique<ToyTextEncoder<S>>(tokenizer.vocab_size(), cfg.d_embed,
                                               cfg.encoder_seed, cfg.positional_mode,
                                               tokenizer.vocab_sha());
}

}  // namespace histogen::textcond
