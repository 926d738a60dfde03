#pragma once

#include <utility>

#include "histogen/nn/attention.hpp"

namespace histogen::nn {

// GroupNorm -> SiLU -> conv, time-embedding injection, GroupNorm -> SiLU ->
// zero-init conv, residual skip (1x1 conv when channel counts differ).
template <class S>
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(Index in_ch, Index out_ch, Index temb_dim, Index groups, Rng& rng,
             const Precision<S>* prec)
        : in_(in_ch), out_(out_ch), temb_dim_(temb_dim) {
        gn1_ = GroupNorm<S>(in_ch, norm_groups(in_ch, groups), prec);
        act1_ = SiLU<S>(prec);
        conv1_ = Conv2d<S>(in_ch, out_ch, 3, 1, 1, rng, prec);
        if (temb_dim > 0) {
            emb_act_ = SiLU<S>(prec);
            emb_lin_ = Linear<S>(temb_dim, out_ch, true, rng, prec);
        }
        gn2_ = GroupNorm<S>(out_ch, norm_groups(out_ch, groups), prec);
        act2_ = SiLU<S>(prec);
        conv2_ = Conv2d<S>(out_ch, out_ch, 3, 1, 1, rng, prec, /*zero_init=*/true);
        if (in_ch != out_ch) skip_ = Conv2d<S>(in_ch, out_ch, 1, 1, 0, rng, prec);
    }

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>* temb) {
        Tensor<S> h = conv1_.forward(act1_.forward(gn1_.forward(x)));
        if (temb_dim_ > 0) {
            if (!temb) throw ShapeError("ResBlock expects a time embedding");
            const Tensor<S> e = emb_lin_.forward(emb_act_.forward(*temb));  // (B, out)
            const Index B = h.dim(0), HW = h.dim(2) * h.dim(3);
            for (Index b = 0; b < B; ++b) {
                for (Index c = 0; c < out_; ++c) {
                    S* dst = h.data() + (b * out_ + c) * HW;
                    const S ev = e(b, c);
                    for (Index p = 0; p < HW; ++p) dst[p] += ev;
                }
            }
        }
        Tensor<S> h2 = conv2_.forward(act2_.forward(gn2_.forward(h)));
        if (in_ != out_) {
            Tensor<S> sk = skip_.forward(x);
            h2.arr() += sk.arr();
        } else {
            h2.arr() += x.arr();
        }
        return h2;
    }

    // Returns (dx, dtemb); dtemb is empty when the block has no embedding.
    std::pair<Tensor<S>, Tensor<S>> backward(const Tensor<S>& dy) {
        Tensor<S> dh = gn2_.backward(act2_.backward(conv2_.backward(dy)));

        Tensor<S> dtemb;
        if (temb_dim_ > 0) {
            const Index B = dh.dim(0), HW = dh.dim(2) * dh.dim(3);
            Tensor<S> de({B, out_});
            for (Index b = 0; b < B; ++b) {
                for (Index c = 0; c < out_; ++c) {
                    const S* src = dh.data() + (b * out_ + c) * HW;
                    double s = 0;
                    for (Index p = 0; p < HW; ++p) s += static_cast<double>(src[p]);
                    de(b, c) = static_cast<S>(s);
                }
            }
            dtemb = emb_act_.backward(emb_lin_.backward(de));
        }

        Tensor<S> dx = gn1_.backward(act1_.backward(conv1_.backward(dh)));
        if (in_ != out_) {
            Tensor<S> dsk = skip_.backward(dy);
            dx.arr() += dsk.arr();
        } else {
            dx.arr() += dy.arr();
        }
        return {std::move(dx), std::move(dtemb)};
    }

    void collect(const std::string& prefix, NamedParams<S>& out) {
        gn1_.collect(prefix + ".gn1", out);
        conv1_.collect(prefix + ".conv1", out);
        if (temb_dim_ > 0) emb_lin_.collect(prefix + ".emb", out);
        gn2_.collect(prefix + ".gn2", out);
        conv2_.collect(prefix + ".conv2", out);
        if (in_ != out_) skip_.collect(prefix + ".skip", out);
    }

private:
    Index in_ = 0, out_ = 0, temb_dim_ = 0;
    GroupNorm<S> gn1_, gn2_;
    SiLU<S> act1_, act2_, emb_act_;
    Conv2d<S> conv1_, conv2_, skip_;
    Linear<S> emb_lin_;
};

template <class S>
class Downsample {
public:
    Downsample() = default;
    Downsample(Index channels, Rng& rng, const Precision<S>* prec)
        : conv_(channels, channels, 3, 2, 1, rng, prec) {}

    Tensor<S> forward(const Tensor<S>& x) { return conv_.forward(x); }
    Tensor<S> backward(const Tensor<S>& dy) { return conv_.backward(dy); }
    void collect(const std::string& prefix, NamedParams<S>& out) {
        conv_.collect(prefix + ".conv", out);
    }

private:
    Conv2d<S> conv_;
};

// GroupNorm -> linear proj_in -> transformer over spatial tokens ->
// zero-init proj_out, residual around the whole block. Cross-attention inside
// consumes the (context_len x context_dim) text context.
template <class S>
class SpatialTransformer {
public:
    SpatialTransformer() = default;
    SpatialTransformer(Index channels, Index context_dim, Index heads, Index groups, Rng& rng,
                       const Precision<S>* prec)
        : gn_(channels, norm_groups(channels, groups), prec),
          proj_in_(channels, channels, true, rng, prec),
          block_(channels, context_dim, heads, rng, prec),
          proj_out_(channels, channels, true, rng, prec, /*zero_init=*/true) {}

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& ctx) {
        h_ = x.dim(2);
        w_ = x.dim(3);
        const Index B = x.dim(0), C = x.dim(1), HW = h_ * w_;
        Tensor<S> tok = chw_to_tokens(gn_.forward(x));
        Tensor<S> t1 = proj_in_.forward(tok);
        t1.reshape({B, HW, C});
        Tensor<S> t2 = block_.forward(t1, ctx);
        Tensor<S> t3 = proj_out_.forward(t2);
        t3.reshape({B, HW, C});
        Tensor<S> y = tokens_to_chw(t3, h_, w_);
        y.arr() += x.arr();
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy) {
        const Index B = dy.dim(0), C = dy.dim(1), HW = h_ * w_;
        Tensor<S> dt3 = chw_to_tokens(dy);
        Tensor<S> dt2 = proj_out_.backward(dt3);
        dt2.reshape({B, HW, C});
        Tensor<S> dt1 = block_.backward(dt2);
        Tensor<S> dtok = proj_in_.backward(dt1);
        dtok.reshape({B, HW, C});
        Tensor<S> dx = gn_.backward(tokens_to_chw(dtok, h_, w_));
        dx.arr() += dy.arr();
        return dx;
    }

    void collect(const std::string& prefix, NamedParams<S>& out) {
        gn_.collect(prefix + ".gn", out);
        proj_in_.collect(prefix + ".proj_in", out);
        block_.collect(prefix + ".block", out);
        proj_out_.collect(prefix + ".proj_out", out);
    }

private:
    GroupNorm<S> gn_;
    Linear<S> proj_in_;
    TransformerBlock<S> block_;
    Linear<S> proj_out_;
    Index h_ = 0, w_ = 0;
};

template <class S>
class Upsample {
public:
    Upsample() = default;
    Upsample(Index channels, Rng& rng, const Precision<S>* prec)
        : conv_(channels, channels, 3, 1, 1, rng, prec) {}

    Tensor<S> forward(const Tensor<S>& x) { return conv_.forward(upsample_nearest2x(x)); }
    Tensor<S> backward(const Tensor<S>& dy) {
        return upsample_nearest2x_backward(conv_.backward(dy));
    }
    void collect(const std::string& prefix, NamedParams<S>& out) {
        conv_.collect(prefix + ".conv", out);
    }

private:
    Conv2d<S> conv_;
};

}  // namespace histogen::nn
