#pragma once

#include <memory>
#include <string>

#include "histogen/corpus/manifest.hpp"
#include "histogen/diffusion/train.hpp"
#include "histogen/textcond/config.hpp"

namespace histogen::diffusion {

struct ScheduleConfig {
    ScheduleKind kind = ScheduleKind::Linear;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule build() const { return make_schedule(kind, T, beta_start, beta_end); }

    nlohmann::json to_json() const {
        return {{"kind", to_string(kind)}, {"T", T}, {"beta_start", beta_start},
                {"beta_end", beta_end}};
    }
    static ScheduleConfig from_json(const nlohmann::json& j) {
        ScheduleConfig c;
        c.kind = schedule_kind_from_string(j.value("kind", "linear"));
        c.T = j.value("T", 1000);
        c.beta_start = j.value("beta_start", 1e-4);
        c.beta_end = j.value("beta_end", 0.02);
        return c;
    }
};

struct LdmTrainOptions {
    TrainConfig train;
    ScheduleConfig schedule;
    UNetConfig unet;  // context_len/context_dim/latent_size filled by the caller
    textcond::TextCondConfig textcond;
    std::string vae_checkpoint;
    std::string image_root;
    std::string metrics_path;
    std::string checkpoint_path;
    std::string resume_from;  // optional: continue a previous run
};

struct LdmTrainResult {
    double first_loss = 0;
    double final_smoothed_loss = 0;
    long steps = 0;
    std::int64_t peak_mem_bytes = 0;  // max per-step live-tensor peak
};

// Latent diffusion training: frozen VAE + frozen text encoder, trainable
// U-Net only. Captions must be present on train-split records.
LdmTrainResult train_ldm(const corpus::Manifest& manifest, const LdmTrainOptions& opt);

struct LoadedLdm {
    std::unique_ptr<UNet<float>> model;
    ScheduleConfig schedule;
    textcond::TextCondConfig textcond;
    nlohmann::json meta;  // includes vae_checkpoint_sha, scale_factor, vocab_sha, step
};

LoadedLdm load_ldm_checkpoint(const std::string& path, const PrecisionPolicy& policy = {});

}  // namespace histogen::diffusion
