#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <json.hpp>

#include "histogen/nn/adam.hpp"
#include "histogen/nn/blocks.hpp"

namespace histogen::vae {

using nn::NamedParams;
using nn::Precision;
using nn::PrecisionPolicy;

struct AutoencoderConfig {
    int f = 4;               // downsampling factor, power of 2
    Index z_channels = 4;
    Index base_width = 32;
    double kl_weight = 1e-3;
    Index image_size = 32;   // 256 for fidelity runs, 32 for the toy pipeline
    Index groups = 8;

    int levels() const {
        int l = 0;
        for (int v = f; v > 1; v /= 2) ++l;
        return l;
    }

    void validate() const {
        if (f < 1 || (f & (f - 1)) != 0) throw ConfigError("vae.f must be a power of 2");
        if (image_size % f != 0) throw ConfigError("vae.image_size must be divisible by f");
        if (kl_weight < 0) throw ConfigError("vae.kl_weight must be >= 0");
    }

    nlohmann::json to_json() const {
        return {{"f", f},
                {"z_channels", z_channels},
                {"base_width", base_width},
                {"kl_weight", kl_weight},
                {"image_size", image_size},
                {"groups", groups}};
    }
    static AutoencoderConfig from_json(const nlohmann::json& j) {
        AutoencoderConfig c;
        c.f = j.value("f", 4);
        c.z_channels = j.value("z_channels", Index{4});
        c.base_width = j.value("base_width", Index{32});
        c.kl_weight = j.value("kl_weight", 1e-3);
        c.image_size = j.value("image_size", Index{32});
        c.groups = j.value("groups", Index{8});
        return c;
    }
};

template <class S>
struct GaussianPosterior {
    Tensor<S> mean;
    Tensor<S> log_variance;  // clamped to [-30, 20]
};

// Reparameterization z = mean + exp(0.5 * logvar) * noise.
template <class S>
Tensor<S> sample_posterior(const GaussianPosterior<S>& p, const Tensor<S>& noise) {
    if (!p.mean.same_shape(noise)) throw ShapeError("sample_posterior: noise shape mismatch");
    Tensor<S> z;
    z.resize(p.mean.dims_vec());
    for (Index i = 0; i < z.size(); ++i) {
        z[i] = p.mean[i] +
               static_cast<S>(std::exp(0.5 * static_cast<double>(p.log_variance[i]))) * noise[i];
    }
    return z;
}

// Small KL-regularized convolutional autoencoder providing the latent space
// for diffusion. L1 + KL objective; the borrowed perceptual/adversarial
// losses of full-scale latent-diffusion stacks are intentionally absent.
template <class S>
class Autoencoder {
public:
    static constexpr double kLogVarMin = -30.0;
    static constexpr double kLogVarMax = 20.0;

    Autoencoder(const AutoencoderConfig& cfg, std::uint64_t seed,
                const PrecisionPolicy& policy = {})
        : cfg_(cfg) {
        cfg_.validate();
        prec_.configure(policy);
        Rng rng(derive_seed(seed, "vae-init"));
        const int L = cfg_.levels();
        std::vector<Index> widths(static_cast<std::size_t>(L));
        for (int i = 0; i < L; ++i) {
            widths[static_cast<std::size_t>(i)] = cfg_.base_width * (i == 0 ? 1 : 2);
        }
        const Index wtop = L > 0 ? widths.back() : cfg_.base_width;

        enc_in_ = nn::Conv2d<S>(3, cfg_.base_width, 3, 1, 1, rng, &prec_);
        for (int i = 0; i < L; ++i) {
            const Index in_w = i == 0 ? cfg_.base_width : widths[static_cast<std::size_t>(i - 1)];
            enc_res_.emplace_back(in_w, widths[static_cast<std::size_t>(i)], 0, cfg_.groups, rng,
                                  &prec_);
            enc_down_.emplace_back(widths[static_cast<std::size_t>(i)], rng, &prec_);
        }
        enc_mid_ = nn::ResBlock<S>(wtop, wtop, 0, cfg_.groups, rng, &prec_);
        enc_norm_ = nn::GroupNorm<S>(wtop, nn::norm_groups(wtop, cfg_.groups), &prec_);
        enc_act_ = nn::SiLU<S>(&prec_);
        enc_out_ = nn::Conv2d<S>(wtop, 2 * cfg_.z_channels, 3, 1, 1, rng, &prec_);

        dec_in_ = nn::Conv2d<S>(cfg_.z_channels, wtop, 3, 1, 1, rng, &prec_);
        dec_mid_ = nn::ResBlock<S>(wtop, wtop, 0, cfg_.groups, rng, &prec_);
        for (int i = L - 1; i >= 0; --i) {
            const Index w_i = widths[static_cast<std::size_t>(i)];
            const Index out_w = i == 0 ? cfg_.base_width : widths[static_cast<std::size_t>(i - 1)];
            dec_up_.emplace_back(w_i, rng, &prec_);
            dec_res_.emplace_back(w_i, out_w, 0, cfg_.groups, rng, &prec_);
        }
        dec_norm_ = nn::GroupNorm<S>(cfg_.base_width, nn::norm_groups(cfg_.base_width, cfg_.groups),
                                     &prec_);
        dec_act_ = nn::SiLU<S>(&prec_);
        dec_out_ = nn::Conv2d<S>(cfg_.base_width, 3, 3, 1, 1, rng, &prec_, /*zero_init=*/true);
    }

    const AutoencoderConfig& config() const { return cfg_; }
    Precision<S>& precision() { return prec_; }

    GaussianPosterior<S> encode(const Tensor<S>& images) {
        check_image_shape(images);
        Tensor<S> h = enc_in_.forward(images);
        for (std::size_t i = 0; i < enc_res_.size(); ++i) {
            h = enc_res_[i].forward(h, nullptr);
            h = enc_down_[i].forward(h);
        }
        h = enc_mid_.forward(h, nullptr);
        h = enc_out_.forward(enc_act_.forward(enc_norm_.forward(h)));

        const Index B = h.dim(0), z = cfg_.z_channels, Hh = h.dim(2), Ww = h.dim(3);
        GaussianPosterior<S> post;
        post.mean.resize({B, z, Hh, Ww});
        post.log_variance.resize({B, z, Hh, Ww});
        clamp_mask_.resize({B, z, Hh, Ww});
        const Index per = z * Hh * Ww;
        for (Index b = 0; b < B; ++b) {
            const S* src = h.data() + b * 2 * per;
            std::copy(src, src + per, post.mean.data() + b * per);
            for (Index i = 0; i < per; ++i) {
                const double raw = static_cast<double>(src[per + i]);
                const double cl = std::min(kLogVarMax, std::max(kLogVarMin, raw));
                post.log_variance[b * per + i] = static_cast<S>(cl);
                clamp_mask_[b * per + i] = (raw > kLogVarMin && raw < kLogVarMax) ? S{1} : S{0};
            }
        }
        return post;
    }

    Tensor<S> decode(const Tensor<S>& z) {
        if (z.rank() != 4 || z.dim(1) != cfg_.z_channels) {
            throw ShapeError("decode: expected (B," + std::to_string(cfg_.z_channels) +
                             ",h,w), got " + z.shape_str());
        }
        Tensor<S> h = dec_in_.forward(z);
        h = dec_mid_.forward(h, nullptr);
        for (std::size_t i = 0; i < dec_up_.size(); ++i) {
            h = dec_up_[i].forward(h);
            h = dec_res_[i].forward(h, nullptr);
        }
        h = dec_out_.forward(dec_act_.forward(dec_norm_.forward(h)));
        // bounded output activation keeps pixels in [-1,1]
        xhat_.resize(h.dims_vec());
        xhat_.arr() = h.arr().tanh();
        return xhat_;
    }

    struct LossParts {
        double total = 0, reconstruction = 0, kl = 0;
    };

    // Full training pass: encode, reparameterize with the provided noise,
    // decode, L1 + kl_weight * KL (both per-element means).
    LossParts forward_loss(const Tensor<S>& x, const Tensor<S>& noise) {
        x_ = x;
        post_ = encode(x);
        noise_ = noise;
        z_ = sample_posterior(post_, noise);
        const Tensor<S>& xhat = decode(z_);

        LossParts parts;
        const double n_img = static_cast<double>(x.size());
        parts.reconstruction =
            (xhat.arr() - x.arr()).abs().template cast<double>().sum() / n_img;

        const double n_lat = static_cast<double>(post_.mean.size());
        const auto mu = post_.mean.arr();
        const auto lv = post_.log_variance.arr();
        parts.kl = 0.5 *
                   (mu.square() + lv.exp() - S(1) - lv).template cast<double>().sum() / n_lat;
        parts.total = parts.reconstruction + cfg_.kl_weight * parts.kl;
        return parts;
    }

    // Accumulates parameter gradients for the last forward_loss call.
    void backward() {
        const double n_img = static_cast<double>(x_.size());
        Tensor<S> dxhat;
        dxhat.resize(x_.dims_vec());
        dxhat.arr() = (xhat_.arr() - x_.arr()).sign() * static_cast<S>(1.0 / n_img);
        Tensor<S> dz = decode_backward(dxhat);

        // reparameterization + KL gradients
        const double n_lat = static_cast<double>(post_.mean.size());
        Tensor<S> dmean;
        dmean.resize(post_.mean.dims_vec());
        Tensor<S> dlogvar;
        dlogvar.resize(post_.mean.dims_vec());
        for (Index i = 0; i < post_.mean.size(); ++i) {
            const double mu = static_cast<double>(post_.mean[i]);
            const double lv = static_cast<double>(post_.log_variance[i]);
            const double dzi = static_cast<double>(dz[i]);
            dmean[i] = static_cast<S>(dzi + cfg_.kl_weight * mu / n_lat);
            double dlv = dzi * 0.5 * std::exp(0.5 * lv) * static_cast<double>(noise_[i]) +
                         cfg_.kl_weight * 0.5 * (std::exp(lv) - 1.0) / n_lat;
            dlv *= static_cast<double>(clamp_mask_[i]);
            dlogvar[i] = static_cast<S>(dlv);
        }
        encode_backward(dmean, dlogvar);
    }

    Tensor<S> decode_backward(const Tensor<S>& dxhat) {
        Tensor<S> dh;
        dh.resize(dxhat.dims_vec());
        dh.arr() = dxhat.arr() * (S(1) - xhat_.arr().square());
        dh = dec_norm_.backward(dec_act_.backward(dec_out_.backward(dh)));
        for (std::size_t i = dec_up_.size(); i-- > 0;) {
            dh = dec_res_[i].backward(dh).first;
            dh = dec_up_[i].backward(dh);
        }
        dh = dec_mid_.backward(dh).first;
        return dec_in_.backward(dh);
    }

    void encode_backward(const Tensor<S>& dmean, const Tensor<S>& dlogvar) {
        const Index B = dmean.dim(0), per = dmean.size() / dmean.dim(0);
        Tensor<S> dcat({B, 2 * cfg_.z_channels, dmean.dim(2), dmean.dim(3)});
        for (Index b = 0; b < B; ++b) {
            std::copy(dmean.data() + b * per, dmean.data() + (b + 1) * per,
                      dcat.data() + b * 2 * per);
            std::copy(dlogvar.data() + b * per, dlogvar.data() + (b + 1) * per,
                      dcat.data() + b * 2 * per + per);
        }
        Tensor<S> dh = enc_norm_.backward(enc_act_.backward(enc_out_.backward(dcat)));
        dh = enc_mid_.backward(dh).first;
        for (std::size_t i = enc_res_.size(); i-- > 0;) {
            dh = enc_down_[i].backward(dh);
            dh = enc_res_[i].backward(dh).first;
        }
        enc_in_.backward(dh);
    }

    NamedParams<S> params() {
        NamedParams<S> out;
        enc_in_.collect("enc.in", out);
        for (std::size_t i = 0; i < enc_res_.size(); ++i) {
            enc_res_[i].collect("enc.res" + std::to_string(i), out);
            enc_down_[i].collect("enc.down" + std::to_string(i), out);
        }
        enc_mid_.collect("enc.mid", out);
        enc_norm_.collect("enc.norm", out);
        enc_out_.collect("enc.out", out);
        dec_in_.collect("dec.in", out);
        dec_mid_.collect("dec.mid", out);
        for (std::size_t i = 0; i < dec_up_.size(); ++i) {
            dec_up_[i].collect("dec.up" + std::to_string(i), out);
            dec_res_[i].collect("dec.res" + std::to_string(i), out);
        }
        dec_norm_.collect("dec.norm", out);
        dec_out_.collect("dec.out", out);
        return out;
    }

private:
    void check_image_shape(const Tensor<S>& images) const {
        if (images.rank() != 4 || images.dim(1) != 3) {
            throw ShapeError("encode: expected (B,3,H,W), got " + images.shape_str());
        }
        if (images.dim(2) % cfg_.f != 0 || images.dim(3) % cfg_.f != 0) {
            throw ShapeError("encode: spatial dims " + images.shape_str() +
                             " not divisible by f=" + std::to_string(cfg_.f));
        }
    }

    AutoencoderConfig cfg_;
    Precision<S> prec_;

    nn::Conv2d<S> enc_in_;
    std::vector<nn::ResBlock<S>> enc_res_;
    std::vector<nn::Downsample<S>> enc_down_;
    nn::ResBlock<S> enc_mid_;
    nn::GroupNorm<S> enc_norm_;
    nn::SiLU<S> enc_act_;
    nn::Conv2d<S> enc_out_;

    nn::Conv2d<S> dec_in_;
    nn::ResBlock<S> dec_mid_;
    std::vector<nn::Upsample<S>> dec_up_;
    std::vector<nn::ResBlock<S>> dec_res_;
    nn::GroupNorm<S> dec_norm_;
    nn::SiLU<S> dec_act_;
    nn::Conv2d<S> dec_out_;

    // training caches
    Tensor<S> x_, noise_, z_, xhat_, clamp_mask_;
    GaussianPosterior<S> post_;
};

}  // namespace histogen::vae
