#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include <json.hpp>

#include "histogen/nn/blocks.hpp"

namespace histogen::diffusion {

using nn::NamedParams;
using nn::Precision;
using nn::PrecisionPolicy;

struct UNetConfig {
    Index in_channels = 4;   // latent channels
    Index base_width = 32;
    std::vector<int> channel_mult = {1, 2};
    std::vector<Index> attn_resolutions = {8, 4};  // latent spatial sizes with transformers
    Index heads = 4;
    Index context_dim = 64;  // text embedding width
    Index context_len = 77;  // n_windows * 77; fixed per trained model
    Index time_embed_mult = 4;
    Index groups = 8;
    Index latent_size = 8;   // image_size / f

    int levels() const { return static_cast<int>(channel_mult.size()); }
    Index width(int level) const {
        return base_width * channel_mult[static_cast<std::size_t>(level)];
    }
    Index time_dim() const { return base_width * time_embed_mult; }
    bool attn_at(int level) const {
        const Index s = latent_size >> level;
        return std::find(attn_resolutions.begin(), attn_resolutions.end(), s) !=
               attn_resolutions.end();
    }

    void validate() const {
        if (channel_mult.empty()) throw ConfigError("unet.channel_mult must be nonempty");
        if (context_len % 77 != 0) throw ConfigError("unet.context_len must be a multiple of 77");
        for (int l = 0; l < levels(); ++l) {
            if (width(l) % heads != 0) throw ConfigError("unet width not divisible by heads");
            if ((latent_size >> l) < 1) throw ConfigError("unet has more levels than resolution");
        }
    }

    nlohmann::json to_json() const {
        return {{"in_channels", in_channels},
                {"base_width", base_width},
                {"channel_mult", channel_mult},
                {"attn_resolutions", attn_resolutions},
                {"heads", heads},
                {"context_dim", context_dim},
                {"context_len", context_len},
                {"time_embed_mult", time_embed_mult},
                {"groups", groups},
                {"latent_size", latent_size}};
    }
    static UNetConfig from_json(const nlohmann::json& j) {
        UNetConfig c;
        c.in_channels = j.value("in_channels", Index{4});
        c.base_width = j.value("base_width", Index{32});
        c.channel_mult = j.value("channel_mult", std::vector<int>{1, 2});
        c.attn_resolutions = j.value("attn_resolutions", std::vector<Index>{8, 4});
        c.heads = j.value("heads", Index{4});
        c.context_dim = j.value("context_dim", Index{64});
        c.context_len = j.value("context_len", Index{77});
        c.time_embed_mult = j.value("time_embed_mult", Index{4});
        c.groups = j.value("groups", Index{8});
        c.latent_size = j.value("latent_size", Index{8});
        return c;
    }
};

// Time- and text-conditioned U-Net noise predictor. Conditioning enters
// through cross-attention at every configured attention resolution; the
// context shape (context_len x context_dim) is validated on every call and
// mismatches fail loudly.
template <class S>
class UNet {
public:
    UNet(const UNetConfig& cfg, std::uint64_t seed, const PrecisionPolicy& policy = {})
        : cfg_(cfg) {
        cfg_.validate();
        prec_.configure(policy);
        Rng rng(derive_seed(seed, "unet-init"));
        const int L = cfg_.levels();
        const Index tdim = cfg_.time_dim();

        time_lin1_ = nn::Linear<S>(cfg_.base_width, tdim, true, rng, &prec_);
        time_act_ = nn::SiLU<S>(&prec_);
        time_lin2_ = nn::Linear<S>(tdim, tdim, true, rng, &prec_);

        conv_in_ = nn::Conv2d<S>(cfg_.in_channels, cfg_.base_width, 3, 1, 1, rng, &prec_);

        // down path: ResBlock (+transformer), downsample between levels
        for (int i = 0; i < L; ++i) {
            const Index in_w = i == 0 ? cfg_.base_width : cfg_.width(i - 1);
            down_res_.emplace_back(in_w, cfg_.width(i), tdim, cfg_.groups, rng, &prec_);
            down_attn_.emplace_back();
            if (cfg_.attn_at(i)) {
                down_attn_.back() = nn::SpatialTransformer<S>(
                    cfg_.width(i), cfg_.context_dim, cfg_.heads, cfg_.groups, rng, &prec_);
            }
            if (i < L - 1) downs_.emplace_back(cfg_.width(i), rng, &prec_);
        }

        const Index wtop = cfg_.width(L - 1);
        mid_res1_ = nn::ResBlock<S>(wtop, wtop, tdim, cfg_.groups, rng, &prec_);
        mid_attn_ = nn::SpatialTransformer<S>(wtop, cfg_.context_dim, cfg_.heads, cfg_.groups,
                                              rng, &prec_);
        mid_res2_ = nn::ResBlock<S>(wtop, wtop, tdim, cfg_.groups, rng, &prec_);

        // up path: two ResBlocks per level (skip concat), upsample between
        // levels. Skip widths mirror the down-path push order.
        std::vector<Index> skip_w;
        skip_w.push_back(cfg_.base_width);  // conv_in
        for (int i = 0; i < L; ++i) {
            skip_w.push_back(cfg_.width(i));           // level ResBlock output
            if (i < L - 1) skip_w.push_back(cfg_.width(i));  // downsample output
        }
        Index cur = wtop;
        for (int i = L - 1; i >= 0; --i) {
            for (int j = 0; j < 2; ++j) {
                const Index sw = skip_w.back();
                skip_w.pop_back();
                up_res_.emplace_back(cur + sw, cfg_.width(i), tdim, cfg_.groups, rng, &prec_);
                up_attn_.emplace_back();
                if (cfg_.attn_at(i)) {
                    up_attn_.back() = nn::SpatialTransformer<S>(
                        cfg_.width(i), cfg_.context_dim, cfg_.heads, cfg_.groups, rng, &prec_);
                }
                up_has_attn_.push_back(cfg_.attn_at(i));
                cur = cfg_.width(i);
            }
            if (i > 0) ups_.emplace_back(cfg_.width(i), rng, &prec_);
        }

        out_norm_ = nn::GroupNorm<S>(cfg_.base_width, nn::norm_groups(cfg_.base_width, cfg_.groups),
                                     &prec_);
        out_act_ = nn::SiLU<S>(&prec_);
        out_conv_ = nn::Conv2d<S>(cfg_.base_width, cfg_.in_channels, 3, 1, 1, rng, &prec_,
                                  /*zero_init=*/true);
    }

    const UNetConfig& config() const { return cfg_; }
    Precision<S>& precision() { return prec_; }

    // z: (B, in_channels, h, w); timesteps: one per sample; ctx:
    // (B, context_len, context_dim). Returns predicted noise shaped like z.
    Tensor<S> forward(const Tensor<S>& z, const std::vector<int>& timesteps,
                      const Tensor<S>& ctx) {
        const Index B = z.dim(0);
        if (z.rank() != 4 || z.dim(1) != cfg_.in_channels) {
            throw ShapeError("UNet: latent shape " + z.shape_str() + " does not match config");
        }
        if (static_cast<Index>(timesteps.size()) != B) {
            throw ShapeError("UNet: timestep count does not match batch");
        }
        if (ctx.rank() != 3 || ctx.dim(0) != B || ctx.dim(1) != cfg_.context_len ||
            ctx.dim(2) != cfg_.context_dim) {
            throw ShapeError("UNet: context shape " + ctx.shape_str() + " does not match (" +
                             std::to_string(B) + "," + std::to_string(cfg_.context_len) + "," +
                             std::to_string(cfg_.context_dim) + ")");
        }

        std::vector<double> tvals(timesteps.begin(), timesteps.end());
        Tensor<S> sinus = nn::sinusoidal_embedding<S>(tvals, cfg_.base_width);
        prec_.q(sinus);
        temb_ = time_lin2_.forward(time_act_.forward(time_lin1_.forward(sinus)));

        const int L = cfg_.levels();
        skips_.clear();
        skip_dims_.clear();
        Tensor<S> h = conv_in_.forward(z);
        skips_.push_back(h);
        for (int i = 0; i < L; ++i) {
            h = down_res_[static_cast<std::size_t>(i)].forward(h, &temb_);
            if (cfg_.attn_at(i)) h = down_attn_[static_cast<std::size_t>(i)].forward(h, ctx);
            skips_.push_back(h);
            if (i < L - 1) {
                h = downs_[static_cast<std::size_t>(i)].forward(h);
                skips_.push_back(h);
            }
        }

        h = mid_res1_.forward(h, &temb_);
        h = mid_attn_.forward(h, ctx);
        h = mid_res2_.forward(h, &temb_);

        std::size_t k = 0;
        for (int i = L - 1; i >= 0; --i) {
            for (int j = 0; j < 2; ++j, ++k) {
                const Tensor<S> skip = std::move(skips_.back());
                skips_.pop_back();
                h = concat_channels(h, skip);
                h = up_res_[k].forward(h, &temb_);
                if (up_has_attn_[k]) h = up_attn_[k].forward(h, ctx);
            }
            if (i > 0) h = ups_[static_cast<std::size_t>(L - 1 - i)].forward(h);
        }

        return out_conv_.forward(out_act_.forward(out_norm_.forward(h)));
    }

    // Accumulates parameter gradients; returns d(loss)/d(z).
    Tensor<S> backward(const Tensor<S>& deps) {
        const int L = cfg_.levels();
        Tensor<S> dh = out_norm_.backward(out_act_.backward(out_conv_.backward(deps)));
        Tensor<S> dtemb_total = Tensor<S>::zeros_like(temb_);

        // reverse of the up path; dskips is indexed by down-path push order,
        // and backward visits pops last-to-first, i.e. push indices 0,1,2,...
        std::vector<Tensor<S>> dskips(static_cast<std::size_t>(2 * L));
        std::size_t k = up_res_.size();
        std::size_t skip_idx = 0;
        for (int i = 0; i <= L - 1; ++i) {
            if (i > 0) dh = ups_[static_cast<std::size_t>(L - 1 - i)].backward(dh);
            for (int j = 0; j < 2; ++j) {
                --k;
                if (up_has_attn_[k]) dh = up_attn_[k].backward(dh);
                auto [dcat, dtemb] = up_res_[k].backward(dh);
                dtemb_total.arr() += dtemb.arr();
                const Index skip_w = skip_dims_[skip_dims_.size() - 1 - skip_idx];
                auto [dhpart, dskip] = split_channels(dcat, dcat.dim(1) - skip_w);
                dskips[skip_idx] = std::move(dskip);
                ++skip_idx;
                dh = std::move(dhpart);
            }
        }

        // reverse of the mid blocks
        {
            auto [d2, dt2] = mid_res2_.backward(dh);
            dtemb_total.arr() += dt2.arr();
            d2 = mid_attn_.backward(d2);
            auto [d1, dt1] = mid_res1_.backward(d2);
            dtemb_total.arr() += dt1.arr();
            dh = std::move(d1);
        }

        // reverse of the down path, visiting push points in descending order
        std::size_t push_idx = static_cast<std::size_t>(2 * L);
        for (int i = L - 1; i >= 0; --i) {
            if (i < L - 1) {
                --push_idx;
                dh.arr() += dskips[push_idx].arr();
                dh = downs_[static_cast<std::size_t>(i)].backward(dh);
            }
            --push_idx;
            dh.arr() += dskips[push_idx].arr();
            if (cfg_.attn_at(i)) dh = down_attn_[static_cast<std::size_t>(i)].backward(dh);
            auto [dx, dtemb] = down_res_[static_cast<std::size_t>(i)].backward(dh);
            dtemb_total.arr() += dtemb.arr();
            dh = std::move(dx);
        }
        --push_idx;
        dh.arr() += dskips[push_idx].arr();
        Tensor<S> dz = conv_in_.backward(dh);

        // time-embedding MLP
        time_lin1_.backward(time_act_.backward(time_lin2_.backward(dtemb_total)));
        return dz;
    }

    NamedParams<S> params() {
        NamedParams<S> out;
        time_lin1_.collect("time.lin1", out);
        time_lin2_.collect("time.lin2", out);
        conv_in_.collect("conv_in", out);
        for (std::size_t i = 0; i < down_res_.size(); ++i) {
            down_res_[i].collect("down" + std::to_string(i) + ".res", out);
            if (cfg_.attn_at(static_cast<int>(i))) {
                down_attn_[i].collect("down" + std::to_string(i) + ".attn", out);
            }
        }
        for (std::size_t i = 0; i < downs_.size(); ++i) {
            downs_[i].collect("downsample" + std::to_string(i), out);
        }
        mid_res1_.collect("mid.res1", out);
        mid_attn_.collect("mid.attn", out);
        mid_res2_.collect("mid.res2", out);
        for (std::size_t k = 0; k < up_res_.size(); ++k) {
            up_res_[k].collect("up" + std::to_string(k) + ".res", out);
            if (up_has_attn_[k]) up_attn_[k].collect("up" + std::to_string(k) + ".attn", out);
        }
        for (std::size_t i = 0; i < ups_.size(); ++i) {
            ups_[i].collect("upsample" + std::to_string(i), out);
        }
        out_norm_.collect("out.norm", out);
        out_conv_.collect("out.conv", out);
        return out;
    }

private:
    Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
        const Index B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
        skip_dims_.push_back(Cb);
        Tensor<S> out({B, Ca + Cb, a.dim(2), a.dim(3)});
        for (Index n = 0; n < B; ++n) {
            std::copy(a.data() + n * Ca * HW, a.data() + (n + 1) * Ca * HW,
                      out.data() + n * (Ca + Cb) * HW);
            std::copy(b.data() + n * Cb * HW, b.data() + (n + 1) * Cb * HW,
                      out.data() + n * (Ca + Cb) * HW + Ca * HW);
        }
        return out;
    }

    std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>& cat, Index Ca) {
        const Index B = cat.dim(0), C = cat.dim(1), HW = cat.dim(2) * cat.dim(3);
        const Index Cb = C - Ca;
        Tensor<S> a({B, Ca, cat.dim(2), cat.dim(3)});
        Tensor<S> b({B, Cb, cat.dim(2), cat.dim(3)});
        for (Index n = 0; n < B; ++n) {
            std::copy(cat.data() + n * C * HW, cat.data() + n * C * HW + Ca * HW,
                      a.data() + n * Ca * HW);
            std::copy(cat.data() + n * C * HW + Ca * HW, cat.data() + (n + 1) * C * HW,
                      b.data() + n * Cb * HW);
        }
        return {std::move(a), std::move(b)};
    }

    UNetConfig cfg_;
    Precision<S> prec_;

    nn::Linear<S> time_lin1_, time_lin2_;
    nn::SiLU<S> time_act_;
    nn::Conv2d<S> conv_in_;
    std::vector<nn::ResBlock<S>> down_res_;
    std::vector<nn::SpatialTransformer<S>> down_attn_;
    std::vector<nn::Downsample<S>> downs_;
    nn::ResBlock<S> mid_res1_, mid_res2_;
    nn::SpatialTransformer<S> mid_attn_;
    std::vector<nn::ResBlock<S>> up_res_;
    std::vector<nn::SpatialTransformer<S>> up_attn_;
    std::vector<bool> up_has_attn_;
    std::vector<nn::Upsample<S>> ups_;
    nn::GroupNorm<S> out_norm_;
    nn::SiLU<S> out_act_;
    nn::Conv2d<S> out_conv_;

    std::vector<Tensor<S>> skips_;
    std::vector<Index> skip_dims_;
    Tensor<S> temb_;
};

}  // namespace histogen::diffusion
