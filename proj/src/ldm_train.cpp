#include "histogen/diffusion/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>

#include "histogen/core/image.hpp"
#include "histogen/core/serialize.hpp"
#include "histogen/core/sha256.hpp"
#include "histogen/nn/adam.hpp"
#include "histogen/vae/train.hpp"

namespace histogen::diffusion {

using nlohmann::json;

namespace {

struct ConditionTable {
    Tensor<float> contexts;            // (n_unique, L, d)
    std::vector<Index> row_of_record;  // record -> unique caption row
    Tensor<float> null_ctx;            // (L, d)
};

ConditionTable build_conditions(const std::vector<const corpus::PatchRecord*>& records,
                                const textcond::Tokenizer& tok,
                                const textcond::TextEncoder<float>& enc, int n_windows) {
    ConditionTable table;
    std::map<std::string, Index> row_by_caption;
    std::vector<const std::string*> unique;
    table.row_of_record.reserve(records.size());
    for (const auto* r : records) {
        if (!r->caption || r->caption->empty()) {
            throw ConfigError("record '" + r->patch_id +
                              "' has no caption; run the summarize stage first");
        }
        auto [it, inserted] =
            row_by_caption.emplace(*r->caption, static_cast<Index>(row_by_caption.size()));
        if (inserted) unique.push_back(&it->first);
        table.row_of_record.push_back(it->second);
    }
    const Index L = static_cast<Index>(n_windows) * textcond::kWindowLen;
    const Index d = enc.d_embed();
    table.contexts.resize({static_cast<Index>(unique.size()), L, d});
    for (std::size_t u = 0; u < unique.size(); ++u) {
        const Tensor<float> ctx = textcond::encode_condition<float>(*unique[u], tok, enc,
                                                                    n_windows);
        std::copy(ctx.data(), ctx.data() + ctx.size(),
                  table.contexts.data() + static_cast<Index>(u) * L * d);
    }
    table.null_ctx = textcond::null_condition<float>(tok, enc, n_windows);
    return table;
}

// Frozen VAE pass over all training images: sampled latents times the global
// scale factor, cached in memory for the whole run.
Tensor<float> encode_latents(vae::Autoencoder<float>& vaemodel, double scale_factor,
                             const std::vector<std::string>& paths, std::uint64_t seed) {
    const Index chunk = 64;
    Tensor<float> all;
    Index done = 0;
    Rng rng(derive_seed(seed, "latent-cache"));
    while (done < static_cast<Index>(paths.size())) {
        const Index take = std::min<Index>(chunk, static_cast<Index>(paths.size()) - done);
        std::vector<std::string> slice(paths.begin() + done, paths.begin() + done + take);
        const Tensor<float> images = load_image_batch(slice);
        vae::GaussianPosterior<float> post = vaemodel.encode(images);
        Tensor<float> noise;
        noise.resize(post.mean.dims_vec());
        for (Index i = 0; i < noise.size(); ++i) noise[i] = static_cast<float>(rng.normal());
        Tensor<float> z = vae::sample_posterior(post, noise);
        for (Index i = 0; i < z.size(); ++i) z[i] = static_cast<float>(z[i] * scale_factor);
        if (done == 0) {
            all.resize({static_cast<Index>(paths.size()), z.dim(1), z.dim(2), z.dim(3)});
        }
        std::copy(z.data(), z.data() + z.size(), all.data() + done * (z.size() / take));
        done += take;
    }
    return all;
}

void save_ldm(const std::string& path, UNet<float>& model, nn::Adam<float>& adam,
              const LdmTrainOptions& opt, long step, const std::string& vae_sha,
              double scale_factor, const std::string& vocab_sha, double loss_scale,
              int scaler_streak) {
    json meta{{"kind", "ldm"},
              {"step", step},
              {"unet", opt.unet.to_json()},
              {"schedule", opt.schedule.to_json()},
              {"textcond", opt.textcond.to_json()},
              {"vocab_sha", vocab_sha},
              {"vae_checkpoint_sha", vae_sha},
              {"scale_factor", scale_factor},
              {"adam_step", adam.step_count()},
              {"loss_scale", loss_scale},
              {"scaler_streak", scaler_streak},
              {"precision", nn::to_string(opt.train.precision.compute)},
              {"loss_scaling", nn::to_string(opt.train.precision.loss_scaling)}};
    std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
    nn::NamedParams<float> params = model.params();
    for (auto& [name, p] : params) tensors.emplace_back(name, &p->value);
    auto& m1 = adam.moments1();
    auto& m2 = adam.moments2();
    for (std::size_t i = 0; i < params.size(); ++i) {
        tensors.emplace_back("adam.m." + params[i].first, &m1[i]);
        tensors.emplace_back("adam.v." + params[i].first, &m2[i]);
    }
    save_checkpoint(path, meta, tensors);
}

}  // namespace

LoadedLdm load_ldm_checkpoint(const std::string& path, const PrecisionPolicy& policy) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "ldm") {
        throw IoError("checkpoint is not an LDM checkpoint: " + path);
    }
    LoadedLdm out;
    const UNetConfig cfg = UNetConfig::from_json(ck.meta.at("unet"));
    out.model = std::make_unique<UNet<float>>(cfg, 0, policy);
    out.schedule = ScheduleConfig::from_json(ck.meta.at("schedule"));
    out.textcond = textcond::TextCondConfig::from_json(ck.meta.at("textcond"));
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

LdmTrainResult train_ldm(const corpus::Manifest& manifest, const LdmTrainOptions& opt) {
    opt.train.validate(visible_device_count());
    opt.unet.validate();

    // frozen pieces
    vae::LoadedVae vaeload = vae::load_vae_checkpoint(opt.vae_checkpoint);
    const std::string vae_sha = sha256_file(opt.vae_checkpoint);
    textcond::Tokenizer tokenizer(opt.textcond.vocab_path);
    auto encoder = textcond::make_toy_encoder<float>(opt.textcond, tokenizer);

    std::vector<const corpus::PatchRecord*> train_records;
    std::vector<std::string> train_paths;
    for (const auto& r : manifest.records) {
        if (r.split == corpus::Split::Test) continue;
        train_records.push_back(&r);
        train_paths.push_back(
            (std::filesystem::path(opt.image_root) / r.image_path).lexically_normal().string());
    }
    if (train_records.empty()) throw ConfigError("train_ldm: no training records");

    const ConditionTable cond =
        build_conditions(train_records, tokenizer, *encoder, opt.textcond.n_windows);
    const Tensor<float> latents =
        encode_latents(*vaeload.model, vaeload.scale_factor, train_paths, opt.train.seed);
    const Index n = latents.dim(0);
    const Index zc = latents.dim(1), zh = latents.dim(2), zw = latents.dim(3);
    if (zc != opt.unet.in_channels || zh != opt.unet.latent_size) {
        throw ShapeError("train_ldm: latent geometry (" + latents.shape_str() +
                         ") does not match the UNet config");
    }

    const NoiseSchedule sched = opt.schedule.build();
    UNet<float> model(opt.unet, opt.train.seed, opt.train.precision);
    nn::NamedParams<float> params = model.params();
    nn::Adam<float> adam(params, {opt.train.lr, 0.9, 0.999, 1e-8});
    nn::LossScaler scaler(opt.train.precision.loss_scaling == nn::LossScaling::Dynamic);

    long start_step = 0;
    if (!opt.resume_from.empty()) {
        Checkpoint ck = load_checkpoint(opt.resume_from);
        if (ck.meta.value("kind", "") != "ldm") {
            throw IoError("resume checkpoint is not an LDM checkpoint: " + opt.resume_from);
        }
        start_step = ck.meta.at("step").get<long>();
        for (std::size_t i = 0; i < params.size(); ++i) {
            params[i].second->value = ck.tensors.at(params[i].first);
            adam.moments1()[i] = ck.tensors.at("adam.m." + params[i].first);
            adam.moments2()[i] = ck.tensors.at("adam.v." + params[i].first);
        }
        adam.restore_step_count(ck.meta.at("adam_step").get<long>());
        scaler.restore(ck.meta.value("loss_scale", 1.0), ck.meta.value("scaler_streak", 0));
    }

    std::ofstream metrics;
    if (!opt.metrics_path.empty()) {
        const std::filesystem::path mp(opt.metrics_path);
        if (mp.has_parent_path()) std::filesystem::create_directories(mp.parent_path());
        metrics.open(opt.metrics_path, start_step > 0 ? std::ios::app : std::ios::trunc);
    }

    const Index micro = opt.train.batch_size;
    const int accum = opt.train.grad_accum_steps;
    const Index L = cond.null_ctx.dim(0), d = cond.null_ctx.dim(1);
    const Index per_latent = zc * zh * zw;

    DiffusionObjective<float> objective(model);
    LdmTrainResult result;
    double smoothed = 0;
    const double smooth_beta = 0.98;

    for (long step = start_step; step < opt.train.max_iterations; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        MemoryTracker::instance().reset_peak();
        Rng rng = Rng::substream(opt.train.seed, "ldm-step", static_cast<std::uint64_t>(step));
        nn::zero_grads(params);

        double loss_sum = 0;
        for (int a = 0; a < accum; ++a) {
            Tensor<float> z0({micro, zc, zh, zw});
            Tensor<float> eps({micro, zc, zh, zw});
            Tensor<float> ctx({micro, L, d});
            std::vector<int> ts(static_cast<std::size_t>(micro));
            for (Index b = 0; b < micro; ++b) {
                const Index pick = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n)));
                std::copy(latents.data() + pick * per_latent,
                          latents.data() + (pick + 1) * per_latent, z0.data() + b * per_latent);
                ts[static_cast<std::size_t>(b)] =
                    1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(sched.T())));
                for (Index i = 0; i < per_latent; ++i) {
                    eps[b * per_latent + i] = static_cast<float>(rng.normal());
                }
                const bool drop = rng.uniform() < opt.train.condition_dropout_prob;
                const float* src =
                    drop ? cond.null_ctx.data()
                         : cond.contexts.data() +
                               cond.row_of_record[static_cast<std::size_t>(pick)] * L * d;
                std::copy(src, src + L * d, ctx.data() + b * L * d);
            }
            const double loss = objective.forward(z0, ts, eps, ctx, sched);
            if (!std::isfinite(loss)) {
                throw Error("train_ldm: non-finite loss at step " + std::to_string(step) +
                            " micro-batch " + std::to_string(a));
            }
            loss_sum += loss;
            objective.backward(scaler.scale() / accum);
        }
        const double loss_mean = loss_sum / accum;

        const bool finite = nn::grads_finite(params);
        if (!finite && !scaler.enabled()) {
            throw Error("train_ldm: non-finite gradients at step " + std::to_string(step));
        }
        if (scaler.update(finite)) {
            adam.step(params, scaler.scale());
        }

        if (step == start_step && start_step == 0) {
            result.first_loss = loss_mean;
            smoothed = loss_mean;
        } else if (smoothed == 0) {
            smoothed = loss_mean;
        } else {
            smoothed = smooth_beta * smoothed + (1 - smooth_beta) * loss_mean;
        }
        result.peak_mem_bytes = std::max(result.peak_mem_bytes, MemoryTracker::instance().peak());

        if (metrics.is_open() &&
            (step % opt.train.log_every == 0 || step + 1 == opt.train.max_iterations)) {
            const double wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            json row{{"step", step},
                     {"loss", loss_mean},
                     {"lr", opt.train.lr},
                     {"peak_mem_bytes", MemoryTracker::instance().peak()},
                     {"wall_ms", wall_ms}};
            if (scaler.enabled()) row["loss_scale"] = scaler.scale();
            metrics << row.dump() << '\n';
        }

        if (!opt.checkpoint_path.empty() &&
            ((step + 1) % opt.train.checkpoint_every == 0 ||
             step + 1 == opt.train.max_iterations)) {
            save_ldm(opt.checkpoint_path, model, adam, opt, step + 1, vae_sha,
                     vaeload.scale_factor, tokenizer.vocab_sha(), scaler.scale(),
                     scaler.good_streak());
        }
    }
    result.final_smoothed_loss = smoothed;
    result.steps = opt.train.max_iterations;
    return result;
}

}  // namespace histogen::diffusion
