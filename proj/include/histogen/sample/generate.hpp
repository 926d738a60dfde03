#pragma once

#include <string>
#include <vector>

#include "histogen/corpus/manifest.hpp"
#include "histogen/sample/ddim.hpp"

namespace histogen::sample {

struct GenerateOptions {
    SamplerConfig sampler;
    std::string ldm_checkpoint;
    std::string vae_checkpoint;
    std::string vocab_path;
    std::string out_dir;   // PNGs plus generation-manifest.jsonl
    int max_captions = 0;  // 0 = all rows
};

struct GenerateResult {
    int n_images = 0;
    std::string manifest_path;
};

// Batch text-conditioned DDIM generation with classifier-free guidance. All
// checkpoint/encoder consistency checks (context length, vocabulary, latent
// geometry) run before any sampling; per-caption seeds derive from
// (seed, caption index) so shard layout cannot change outputs.
GenerateResult generate(const std::vector<corpus::PatchRecord>& caption_rows,
                        const GenerateOptions& opt);

}  // namespace histogen::sample
