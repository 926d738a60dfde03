#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "histogen/core/tensor.hpp"

namespace histogen {

// Single-file checkpoint container: magic + versioned JSON header followed by
// raw little-endian f32 tensor payloads. Writes are atomic
// (temp-file-then-rename).
struct Checkpoint {
    nlohmann::json meta;
    std::map<std::string, Tensor<float>> tensors;
};

inline constexpr char kCheckpointMagic[8] = {'H', 'G', 'C', 'K', 'P', 'T', '0', '1'};

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace histogen
