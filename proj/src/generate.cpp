#include "histogen/sample/generate.hpp"

#include <filesystem>
#include <fstream>

#include "histogen/core/image.hpp"
#include "histogen/core/sha256.hpp"
#include "histogen/diffusion/trainer.hpp"
#include "histogen/vae/train.hpp"

namespace histogen::sample {

using nlohmann::json;
namespace fs = std::filesystem;

GenerateResult generate(const std::vector<corpus::PatchRecord>& caption_rows,
                        const GenerateOptions& opt) {
    if (opt.sampler.eta < 0.0 || opt.sampler.eta > 1.0) {
        throw ConfigError("sampler: eta must lie in [0,1]");
    }

    diffusion::LoadedLdm ldm = diffusion::load_ldm_checkpoint(opt.ldm_checkpoint);
    vae::LoadedVae vaeload = vae::load_vae_checkpoint(opt.vae_checkpoint);
    textcond::TextCondConfig tc = ldm.textcond;
    tc.vocab_path = opt.vocab_path;
    textcond::Tokenizer tokenizer(tc.vocab_path);
    auto encoder = textcond::make_toy_encoder<float>(tc, tokenizer);

    // Consistency gate before any sampling: context geometry, vocabulary,
    // latent geometry, and the exact VAE the model was trained against.
    const diffusion::UNetConfig& ucfg = ldm.model->config();
    if (ucfg.context_len != tc.context_len() || ucfg.context_dim != tc.d_embed) {
        throw ConfigError("generate: text-condition geometry mismatch: model expects (" +
                          std::to_string(ucfg.context_len) + "," +
                          std::to_string(ucfg.context_dim) + ")");
    }
    if (ldm.meta.value("vocab_sha", "") != tokenizer.vocab_sha()) {
        throw ConfigError("generate: vocabulary hash differs from the one used in training");
    }
    const vae::AutoencoderConfig& vcfg = vaeload.model->config();
    if (ucfg.in_channels != vcfg.z_channels ||
        ucfg.latent_size != vcfg.image_size / vcfg.f) {
        throw ConfigError("generate: latent geometry mismatch between LDM and VAE checkpoints");
    }
    const std::string trained_vae_sha = ldm.meta.value("vae_checkpoint_sha", "");
    const std::string vae_sha = sha256_file(opt.vae_checkpoint);
    if (!trained_vae_sha.empty() && trained_vae_sha != vae_sha) {
        throw ConfigError("generate: VAE checkpoint differs from the one used in training");
    }
    const double scale_factor = ldm.meta.value("scale_factor", vaeload.scale_factor);

    const diffusion::NoiseSchedule sched = ldm.schedule.build();
    const std::vector<int> plan =
        plan_timesteps(sched.T(), opt.sampler.n_steps, opt.sampler.spacing);

    std::vector<corpus::PatchRecord> rows = caption_rows;
    if (opt.max_captions > 0 && static_cast<int>(rows.size()) > opt.max_captions) {
        rows.resize(static_cast<std::size_t>(opt.max_captions));
    }
    for (const auto& r : rows) {
        if (!r.caption || r.caption->empty()) {
            throw ConfigError("generate: record '" + r.patch_id + "' has no caption");
        }
    }
    if (rows.empty()) throw ConfigError("generate: no captions to sample");

    fs::create_directories(opt.out_dir);
    const std::string manifest_path = opt.out_dir + "/generation-manifest.jsonl";
    std::ofstream gm(manifest_path, std::ios::trunc);
    if (!gm) throw IoError("cannot write generation manifest: " + manifest_path);

    const Index L = ucfg.context_len, d = ucfg.context_dim;
    const Index zc = ucfg.in_channels, zs = ucfg.latent_size;
    const Tensor<float> null_one =
        textcond::null_condition<float>(tokenizer, *encoder, tc.n_windows);
    const std::string ldm_sha = sha256_file(opt.ldm_checkpoint);

    GenerateResult result;
    const Index batch = std::max<Index>(1, opt.sampler.batch_size);
    for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(batch)) {
        const Index B =
            std::min<Index>(batch, static_cast<Index>(rows.size() - start));

        Tensor<float> z({B, zc, zs, zs});
        Tensor<float> ctx({B, L, d});
        Tensor<float> nctx({B, L, d});
        std::vector<std::uint64_t> seeds(static_cast<std::size_t>(B));
        std::vector<Rng> rngs;
        rngs.reserve(static_cast<std::size_t>(B));
        for (Index b = 0; b < B; ++b) {
            const std::uint64_t caption_index = start + static_cast<std::uint64_t>(b);
            seeds[static_cast<std::size_t>(b)] =
                derive_seed(opt.sampler.seed, "sample", caption_index);
            rngs.emplace_back(seeds[static_cast<std::size_t>(b)]);
            const Index per = zc * zs * zs;
            for (Index i = 0; i < per; ++i) {
                z[b * per + i] = static_cast<float>(rngs.back().normal());
            }
            const Tensor<float> c = textcond::encode_condition<float>(
                *rows[caption_index].caption, tokenizer, *encoder, tc.n_windows);
            std::copy(c.data(), c.data() + c.size(), ctx.data() + b * L * d);
            std::copy(null_one.data(), null_one.data() + null_one.size(),
                      nctx.data() + b * L * d);
        }

        for (std::size_t k = 0; k < plan.size(); ++k) {
            const int t = plan[k];
            const int t_prev = k + 1 < plan.size() ? plan[k + 1] : 0;
            const std::vector<int> ts(static_cast<std::size_t>(B), t);
            const Tensor<float> eps_c = ldm.model->forward(z, ts, ctx);
            const Tensor<float> eps_u = ldm.model->forward(z, ts, nctx);
            const Tensor<float> eps = guided_eps(eps_c, eps_u, opt.sampler.guidance_scale);
            Tensor<float> noise;
            const Tensor<float>* noise_ptr = nullptr;
            if (opt.sampler.eta > 0.0 && t_prev > 0) {
                noise.resize(z.dims_vec());
                for (Index b = 0; b < B; ++b) {
                    const Index per = zc * zs * zs;
                    for (Index i = 0; i < per; ++i) {
                        noise[b * per + i] =
                            static_cast<float>(rngs[static_cast<std::size_t>(b)].normal());
                    }
                }
                noise_ptr = &noise;
            }
            z = ddim_step(z, eps, t, t_prev, sched, opt.sampler.eta, noise_ptr);
        }

        // unscale and decode
        for (Index i = 0; i < z.size(); ++i) {
            z[i] = static_cast<float>(z[i] / scale_factor);
        }
        const Tensor<float> images = vaeload.model->decode(z);
        const Index per_img = 3 * images.dim(2) * images.dim(3);
        for (Index b = 0; b < B; ++b) {
            const std::size_t caption_index = start + static_cast<std::size_t>(b);
            Tensor<float> one({3, images.dim(2), images.dim(3)});
            std::copy(images.data() + b * per_img, images.data() + (b + 1) * per_img, one.data());
            char name[32];
            std::snprintf(name, sizeof(name), "sample-%06zu.png", caption_index);
            const std::string img_path = opt.out_dir + "/" + name;
            write_png(img_path, tensor_to_image(one));
            gm << json{{"index", caption_index},
                       {"spacing", to_string(opt.sampler.spacing)},
                       {"patch_id", rows[caption_index].patch_id},
                       {"caption", *rows[caption_index].caption},
                       {"seed", seeds[static_cast<std::size_t>(b)]},
                       {"n_steps", opt.sampler.n_steps},
                       {"eta", opt.sampler.eta},
                       {"guidance_scale", opt.sampler.guidance_scale},
                       {"image", name},
                       {"ldm_checkpoint_sha", ldm_sha},
                       {"vae_checkpoint_sha", vae_sha}}
                      .dump()
               << '\n';
            ++result.n_images;
        }
    }
    result.manifest_path = manifest_path;
    return result;
}

}  // namespace histogen::sample
