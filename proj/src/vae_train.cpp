#include "histogen/vae/train.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "histogen/core/image.hpp"
#include "histogen/core/serialize.hpp"
#include "histogen/nn/adam.hpp"

namespace histogen::vae {

using nlohmann::json;

namespace {

Tensor<float> gather_batch(const Tensor<float>& all, const std::vector<Index>& idx) {
    const Index per = all.size() / all.dim(0);
    Tensor<float> out({static_cast<Index>(idx.size()), all.dim(1), all.dim(2), all.dim(3)});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(all.data() + idx[i] * per, all.data() + (idx[i] + 1) * per,
                  out.data() + static_cast<Index>(i) * per);
    }
    return out;
}

}  // namespace

double latent_inverse_std(const Tensor<float>& z) {
    double mean = 0;
    for (Index i = 0; i < z.size(); ++i) mean += z[i];
    mean /= static_cast<double>(z.size());
    double var = 0;
    for (Index i = 0; i < z.size(); ++i) {
        const double d = z[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(z.size());
    if (var < 1e-12) throw ConfigError("compute_scale_factor: degenerate (zero-variance) latents");
    return 1.0 / std::sqrt(var);
}

double compute_scale_factor(Autoencoder<float>& model, const Tensor<float>& calibration_images,
                            std::uint64_t seed) {
    GaussianPosterior<float> post = model.encode(calibration_images);
    Rng rng(derive_seed(seed, "scale-factor"));
    Tensor<float> noise;
    noise.resize(post.mean.dims_vec());
    for (Index i = 0; i < noise.size(); ++i) noise[i] = static_cast<float>(rng.normal());
    return latent_inverse_std(sample_posterior(post, noise));
}

VaeTrainResult train_autoencoder(const corpus::Manifest& manifest, const std::string& manifest_dir,
                                 const AutoencoderConfig& cfg, const VaeTrainOptions& opt) {
    cfg.validate();
    std::vector<std::string> paths =
        corpus::image_paths(manifest, manifest_dir, corpus::Split::Train);
    if (paths.empty()) {
        // fall back to the whole manifest when splits are not assigned yet
        paths = corpus::image_paths(manifest, manifest_dir, corpus::Split::Unassigned);
    }
    if (paths.empty()) throw ConfigError("train_autoencoder: manifest has no records");

    const Tensor<float> images = load_image_batch(paths);
    if (images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size) {
        throw ShapeError("train_autoencoder: images are " + images.shape_str() +
                         " but config image_size=" + std::to_string(cfg.image_size));
    }
    const Index n = images.dim(0);
    const Index B = std::min<Index>(opt.batch_size, n);

    Autoencoder<float> model(cfg, opt.seed);
    nn::NamedParams<float> params = model.params();
    nn::Adam<float> adam(params, {opt.lr, 0.9, 0.999, 1e-8});

    std::ofstream metrics;
    if (!opt.metrics_path.empty()) {
        const std::filesystem::path mp(opt.metrics_path);
        if (mp.has_parent_path()) std::filesystem::create_directories(mp.parent_path());
        metrics.open(opt.metrics_path, std::ios::trunc);
    }

    VaeTrainResult result;
    double smoothed = 0;
    const double smooth_beta = 0.98;
    for (long step = 0; step < opt.steps; ++step) {
        Rng rng = Rng::substream(opt.seed, "vae-step", static_cast<std::uint64_t>(step));
        std::vector<Index> idx(static_cast<std::size_t>(B));
        for (auto& i : idx) i = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n)));
        const Tensor<float> batch = gather_batch(images, idx);
        Tensor<float> noise({B, cfg.z_channels, cfg.image_size / cfg.f, cfg.image_size / cfg.f});
        for (Index i = 0; i < noise.size(); ++i) noise[i] = static_cast<float>(rng.normal());

        const auto t0 = std::chrono::steady_clock::now();
        MemoryTracker::instance().reset_peak();
        nn::zero_grads(params);
        const auto parts = model.forward_loss(batch, noise);
        if (!std::isfinite(parts.total)) {
            throw Error("train_autoencoder: non-finite loss at step " + std::to_string(step) +
                        " (recon=" + std::to_string(parts.reconstruction) +
                        ", kl=" + std::to_string(parts.kl) + ")");
        }
        model.backward();
        adam.step(params);

        if (step == 0) {
            result.first_loss = parts.total;
            smoothed = parts.total;
        } else {
            smoothed = smooth_beta * smoothed + (1 - smooth_beta) * parts.total;
        }
        if (metrics.is_open() && (step % opt.log_every == 0 || step + 1 == opt.steps)) {
            const double wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            metrics << json{{"step", step},
                            {"loss", parts.total},
                            {"recon", parts.reconstruction},
                            {"kl", parts.kl},
                            {"lr", opt.lr},
                            {"peak_mem_bytes", MemoryTracker::instance().peak()},
                            {"wall_ms", wall_ms}}
                           .dump()
                    << '\n';
        }
    }
    result.final_smoothed_loss = smoothed;

    // calibration batch for the latent normalizer
    const Index calib_n = std::min<Index>(n, 256);
    std::vector<Index> idx(static_cast<std::size_t>(calib_n));
    for (Index i = 0; i < calib_n; ++i) idx[static_cast<std::size_t>(i)] = i;
    result.scale_factor = compute_scale_factor(model, gather_batch(images, idx), opt.seed);

    if (!opt.checkpoint_path.empty()) {
        save_vae_checkpoint(opt.checkpoint_path, model, result.scale_factor,
                            {{"trained_steps", opt.steps},
                             {"final_smoothed_loss", result.final_smoothed_loss}});
    }
    return result;
}

void save_vae_checkpoint(const std::string& path, Autoencoder<float>& model, double scale_factor,
                         const nlohmann::json& extra_meta) {
    json meta{{"kind", "vae"},
              {"config", model.config().to_json()},
              {"scale_factor", scale_factor}};
    if (!extra_meta.is_null()) {
        for (const auto& [k, v] : extra_meta.items()) meta[k] = v;
    }
    std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
    for (auto& [name, p] : model.params()) tensors.emplace_back(name, &p->value);
    save_checkpoint(path, meta, tensors);
}

LoadedVae load_vae_checkpoint(const std::string& path, const PrecisionPolicy& policy) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "vae") {
        throw IoError("checkpoint is not a VAE checkpoint: " + path);
    }
    LoadedVae out;
    const AutoencoderConfig cfg = AutoencoderConfig::from_json(ck.meta.at("config"));
    out.model = std::make_unique<Autoencoder<float>>(cfg, 0, policy);
    out.scale_factor = ck.meta.at("scale_factor").get<double>();
    out.meta = ck.meta;
    for (auto& [name, p] : out.model->params()) {
        const auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw IoError("missing tensor '" + name + "' in " + path);
        if (!it->second.same_shape(p->value)) {
            throw ShapeError("tensor '" + name + "' shape mismatch in " + path);
        }
        p->value = it->second;
    }
    return out;
}

}  // namespace histogen::vae
