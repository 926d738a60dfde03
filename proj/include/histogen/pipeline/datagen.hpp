#pragma once

#include <cstdint>
#include <string>

#include "histogen/core/tensor.hpp"

namespace histogen::pipeline {

struct DatagenOptions {
    std::string out_dir;
    int n_cases = 40;
    int patches_per_case = 50;
    Index image_size = 32;
    std::uint64_t seed = 0;
};

// Synthetic two-class textured dataset standing in for histopathology
// patches: striped stroma-like texture vs nested blob texture, pink/purple
// palette, per-patch density variation. Writes images/, reports.jsonl,
// scores.jsonl and mock_responses.json (scripted summaries per case).
void generate_toy_dataset(const DatagenOptions& opt);

// Uniform-noise PNGs, the FID baseline for "worse than the trained model".
void generate_noise_images(const std::string& out_dir, int count, Index image_size,
                           std::uint64_t seed);

}  // namespace histogen::pipeline
