#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "histogen/core/tensor.hpp"

namespace histogen {

struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

// Quick validity probe (signature only), used by manifest building.
bool is_readable_png(const std::string& path);

// Pixel mapping is linear: [0,255] <-> [-1,1].
Tensor<float> image_to_tensor(const ImageU8& img);              // (3,H,W)
ImageU8 tensor_to_image(const Tensor<float>& chw);              // clamps to [-1,1]
Tensor<float> load_image_batch(const std::vector<std::string>& paths);  // (B,3,H,W)

}  // namespace histogen
