#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>

#include "histogen/core/tensor.hpp"
#include "histogen/nn/layers.hpp"

namespace histogen::fid {

// Deterministic, pure feature map over image batches. The identity string is
// logged with every score so reports are traceable to the extractor.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual Eigen::Index dim() const = 0;
    virtual std::string identity() const = 0;
    // images: (B,3,H,W) in [-1,1] -> (B, dim) features.
    virtual Eigen::MatrixXd extract(const Tensor<float>& images) = 0;
};

// Frozen seeded 3-layer convolutional extractor with global average pooling,
// d=64. Removes the large pretrained-network dependency from the test suite;
// an Inception-style extractor can be plugged behind the same interface for
// literature-comparable absolute numbers.
class ToyConvExtractor final : public FeatureExtractor {
public:
    explicit ToyConvExtractor(std::uint64_t seed = 17);

    Eigen::Index dim() const override { return 64; }
    std::string identity() const override;
    Eigen::MatrixXd extract(const Tensor<float>& images) override;

private:
    std::uint64_t seed_;
    nn::Conv2d<float> conv1_, conv2_, conv3_;
};

// name: "toy" (built-in). "inception" is recognized but requires external
// pretrained weights that are not bundled; selecting it reports exactly that.
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, std::uint64_t seed);

}  // namespace histogen::fid
