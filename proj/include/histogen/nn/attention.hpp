#pragma once

#include <utility>

#include "histogen/nn/layers.hpp"

namespace histogen::nn {

// (B,C,H,W) -> (B,HW,C) token layout for transformer blocks.
template <class S>
Tensor<S> chw_to_tokens(const Tensor<S>& x) {
    const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<S> t({B, HW, C});
    for (Index b = 0; b < B; ++b) {
        for (Index c = 0; c < C; ++c) {
            const S* src = x.data() + (b * C + c) * HW;
            S* dst = t.data() + b * HW * C + c;
            for (Index p = 0; p < HW; ++p) dst[p * C] = src[p];
        }
    }
    return t;
}

template <class S>
Tensor<S> tokens_to_chw(const Tensor<S>& t, Index H, Index W) {
    const Index B = t.dim(0), HW = t.dim(1), C = t.dim(2);
    Tensor<S> x({B, C, H, W});
    for (Index b = 0; b < B; ++b) {
        for (Index c = 0; c < C; ++c) {
            const S* src = t.data() + b * HW * C + c;
            S* dst = x.data() + (b * C + c) * HW;
            for (Index p = 0; p < HW; ++p) dst[p] = src[p * C];
        }
    }
    return x;
}

// Multi-head attention. Self-attention passes the same tensor as x and ctx;
// backward returns separate query and key/value input gradients so the caller
// can sum them in that case.
template <class S>
class Attention {
public:
    Attention() = default;
    Attention(Index query_dim, Index context_dim, Index heads, Rng& rng, const Precision<S>* prec)
        : c_(query_dim), ck_(context_dim), h_(heads), prec_(prec) {
        if (query_dim % heads != 0) throw ConfigError("Attention: query_dim % heads != 0");
        dh_ = query_dim / heads;
        to_q_ = Linear<S>(query_dim, query_dim, false, rng, prec);
        to_k_ = Linear<S>(context_dim, query_dim, false, rng, prec);
        to_v_ = Linear<S>(context_dim, query_dim, false, rng, prec);
        to_out_ = Linear<S>(query_dim, query_dim, true, rng, prec, /*zero_init=*/true);
    }

    // x: (B,T,C), ctx: (B,Tc,Ck) -> (B,T,C)
    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& ctx) {
        const Index B = x.dim(0), T = x.dim(1), Tc = ctx.dim(1);
        if (ctx.dim(2) != ck_) {
            throw ShapeError("Attention: context shape " + ctx.shape_str() +
                             " does not match context_dim " + std::to_string(ck_));
        }
        b_ = B;
        t_ = T;
        tc_ = Tc;
        q_ = to_q_.forward(x);    // (B*T, C)
        k_ = to_k_.forward(ctx);  // (B*Tc, C)
        v_ = to_v_.forward(ctx);

        p_.resize({B, h_, T, Tc});
        Tensor<S> o({B * T, c_});
        const S alpha = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh_)));
        for (Index b = 0; b < B; ++b) {
            typename Tensor<S>::ConstMatMap Qm(q_.data() + b * T * c_, T, c_);
            typename Tensor<S>::ConstMatMap Km(k_.data() + b * Tc * c_, Tc, c_);
            typename Tensor<S>::ConstMatMap Vm(v_.data() + b * Tc * c_, Tc, c_);
            typename Tensor<S>::MatMap Om(o.data() + b * T * c_, T, c_);
            for (Index m = 0; m < h_; ++m) {
                typename Tensor<S>::MatMap P(p_.data() + (b * h_ + m) * T * Tc, T, Tc);
                P.noalias() = Qm.block(0, m * dh_, T, dh_) *
                              Km.block(0, m * dh_, Tc, dh_).transpose() * alpha;
                softmax_rows_inplace(P);
                if (prec_ && prec_->active()) {
                    for (Index i = 0; i < T * Tc; ++i) {
                        S& pv = p_.data()[(b * h_ + m) * T * Tc + i];
                        pv = static_cast<S>(round_to_half(static_cast<float>(pv)));
                    }
                }
                Om.block(0, m * dh_, T, dh_).noalias() = P * Vm.block(0, m * dh_, Tc, dh_);
            }
        }
        if (prec_) prec_->q(o);
        Tensor<S> y = to_out_.forward(o);
        y.reshape({B, T, c_});
        return y;
    }

    // Returns (dx, dctx).
    std::pair<Tensor<S>, Tensor<S>> backward(const Tensor<S>& dy) {
        const Index B = b_, T = t_, Tc = tc_;
        Tensor<S> dout = to_out_.backward(dy);  // (B*T, C)

        Tensor<S> dq({B * T, c_}), dk({B * Tc, c_}), dv({B * Tc, c_});
        dk.zero();
        dv.zero();
        const S alpha = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh_)));
        for (Index b = 0; b < B; ++b) {
            typename Tensor<S>::ConstMatMap Qm(q_.data() + b * T * c_, T, c_);
            typename Tensor<S>::ConstMatMap Km(k_.data() + b * Tc * c_, Tc, c_);
            typename Tensor<S>::ConstMatMap Vm(v_.data() + b * Tc * c_, Tc, c_);
            typename Tensor<S>::ConstMatMap dOm(dout.data() + b * T * c_, T, c_);
            typename Tensor<S>::MatMap dQm(dq.data() + b * T * c_, T, c_);
            typename Tensor<S>::MatMap dKm(dk.data() + b * Tc * c_, Tc, c_);
            typename Tensor<S>::MatMap dVm(dv.data() + b * Tc * c_, Tc, c_);
            for (Index m = 0; m < h_; ++m) {
                typename Tensor<S>::ConstMatMap P(p_.data() + (b * h_ + m) * T * Tc, T, Tc);
                Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dP =
                    dOm.block(0, m * dh_, T, dh_) * Vm.block(0, m * dh_, Tc, dh_).transpose();
                dVm.block(0, m * dh_, Tc, dh_).noalias() +=
                    P.transpose() * dOm.block(0, m * dh_, T, dh_);
                // softmax backward: dS = P .* (dP - rowsum(dP .* P))
                for (Index r = 0; r < T; ++r) {
                    auto drow = dP.row(r).array();
                    const auto prow = P.row(r).array();
                    const S dot = (drow * prow).sum();
                    drow = (drow - dot) * prow;
                }
                dP *= alpha;
                dQm.block(0, m * dh_, T, dh_).noalias() = dP * Km.block(0, m * dh_, Tc, dh_);
                dKm.block(0, m * dh_, Tc, dh_).noalias() +=
                    dP.transpose() * Qm.block(0, m * dh_, T, dh_);
            }
        }
        if (prec_) {
            prec_->q(dq);
            prec_->q(dk);
            prec_->q(dv);
        }
        Tensor<S> dx = to_q_.backward(dq);
        dx.reshape({B, T, c_});
        Tensor<S> dctx = to_k_.backward(dk);
        const Tensor<S> dctx2 = to_v_.backward(dv);
        dctx.arr() += dctx2.arr();
        dctx.reshape({B, Tc, ck_});
        return {std::move(dx), std::move(dctx)};
    }

    void collect(const std::string& prefix, NamedParams<S>& out) {
        to_q_.collect(prefix + ".to_q", out);
        to_k_.collect(prefix + ".to_k", out);
        to_v_.collect(prefix + ".to_v", out);
        to_out_.collect(prefix + ".to_out", out);
    }

private:
    static void softmax_rows_inplace(typename Tensor<S>::MatMap& P) {
        for (Index r = 0; r < P.rows(); ++r) {
            auto row = P.row(r).array();
            const S mx = row.maxCoeff();
            row = (row - mx).exp();
            row /= row.sum();
        }
    }

    Index c_ = 0, ck_ = 0, h_ = 1, dh_ = 0;
    Index b_ = 0, t_ = 0, tc_ = 0;
    const Precision<S>* prec_ = nullptr;
    Linear<S> to_q_, to_k_, to_v_, to_out_;
    Tensor<S> q_, k_, v_, p_;
};

template <class S>
class FeedForward {
public:
    FeedForward() = default;
    FeedForward(Index dim, Index mult, Rng& rng, const Precision<S>* prec)
        : lin1_(dim, dim * mult, true, rng, prec),
          act_(prec),
          lin2_(dim * mult, dim, true, rng, prec) {}

    Tensor<S> forward(const Tensor<S>& x) {
        const auto dims = x.dims_vec();
        Tensor<S> y = lin2_.forward(act_.forward(lin1_.forward(x)));
        y.reshape(dims);
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy) {
        Tensor<S> dx = lin1_.backward(act_.backward(lin2_.backward(dy)));
        dx.reshape(dy.dims_vec());
        return dx;
    }

    void collect(const std::string& prefix, NamedParams<S>& out) {
        lin1_.collect(prefix + ".lin1", out);
        lin2_.collect(prefix + ".lin2", out);
    }

private:
    Linear<S> lin1_;
    Gelu<S> act_;
    Linear<S> lin2_;
};

// Pre-norm transformer block: self-attention, cross-attention over the text
// context, then feed-forward, each wrapped in a residual. The context is a
// frozen text embedding, so its gradient is discarded.
template <class S>
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(Index dim, Index context_dim, Index heads, Rng& rng,
                     const Precision<S>* prec)
        : ln1_(dim, prec),
          attn1_(dim, dim, heads, rng, prec),
          ln2_(dim, prec),
          attn2_(dim, context_dim, heads, rng, prec),
          ln3_(dim, prec),
          ff_(dim, 4, rng, prec) {}

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& ctx) {
        Tensor<S> h1 = ln1_.forward(x);
        Tensor<S> x1 = attn1_.forward(h1, h1);
        x1.arr() += x.arr();

        Tensor<S> h2 = ln2_.forward(x1);
        h2.reshape(x1.dims_vec());
        Tensor<S> x2 = attn2_.forward(h2, ctx);
        x2.arr() += x1.arr();

        Tensor<S> h3 = ln3_.forward(x2);
        Tensor<S> f = ff_.forward(h3);
        f.reshape(x2.dims_vec());
        f.arr() += x2.arr();
        return f;
    }

    Tensor<S> backward(const Tensor<S>& dy) {
        Tensor<S> dh3 = ff_.backward(dy);
        Tensor<S> dx2 = ln3_.backward(dh3);
        dx2.reshape(dy.dims_vec());
        dx2.arr() += dy.arr();

        auto [dh2, dctx] = attn2_.backward(dx2);
        Tensor<S> dx1 = ln2_.backward(dh2);
        dx1.reshape(dx2.dims_vec());
        dx1.arr() += dx2.arr();

        auto [dq, dkv] = attn1_.backward(dx1);
        dq.arr() += dkv.arr();
        Tensor<S> dx = ln1_.backward(dq);
        dx.reshape(dx1.dims_vec());
        dx.arr() += dx1.arr();
        return dx;
    }

    void collect(const std::string& prefix, NamedParams<S>& out) {
        ln1_.collect(prefix + ".ln1", out);
        attn1_.collect(prefix + ".attn1", out);
        ln2_.collect(prefix + ".ln2", out);
        attn2_.collect(prefix + ".attn2", out);
        ln3_.collect(prefix + ".ln3", out);
        ff_.collect(prefix + ".ff", out);
    }

private:
    LayerNorm<S> ln1_;
    Attention<S> attn1_;
    LayerNorm<S> ln2_;
    Attention<S> attn2_;
    LayerNorm<S> ln3_;
    FeedForward<S> ff_;
};

}  // namespace histogen::nn
