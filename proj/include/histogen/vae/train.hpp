#pragma once

#include <memory>
#include <string>

#include "histogen/corpus/manifest.hpp"
#include "histogen/vae/autoencoder.hpp"

namespace histogen::vae {

struct VaeTrainOptions {
    Index batch_size = 16;
    long steps = 5000;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    long log_every = 25;
    std::string metrics_path;     // line-delimited JSON loss curve
    std::string checkpoint_path;  // written at the end (atomic)
};

struct VaeTrainResult {
    double first_loss = 0;
    double final_smoothed_loss = 0;
    double scale_factor = 1;
};

// Trains on the manifest's train-split images (image paths resolve relative
// to manifest_dir) and stores checkpoint + scale_factor. Aborts with
// diagnostics on non-finite loss.
VaeTrainResult train_autoencoder(const corpus::Manifest& manifest,
                                 const std::string& manifest_dir, const AutoencoderConfig& cfg,
                                 const VaeTrainOptions& opt);

// 1/std of the values in z; errors on degenerate (near-zero variance) input.
double latent_inverse_std(const Tensor<float>& z);

// 1/std of sampled latents over a calibration batch (seeded draw).
double compute_scale_factor(Autoencoder<float>& model, const Tensor<float>& calibration_images,
                            std::uint64_t seed);

void save_vae_checkpoint(const std::string& path, Autoencoder<float>& model, double scale_factor,
                         const nlohmann::json& extra_meta = {});

struct LoadedVae {
    std::unique_ptr<Autoencoder<float>> model;
    double scale_factor = 1;
    nlohmann::json meta;
};

LoadedVae load_vae_checkpoint(const std::string& path, const PrecisionPolicy& policy = {});

}  // namespace histogen::vae
