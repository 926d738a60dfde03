#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "histogen/core/rng.hpp"
#include "histogen/core/tensor.hpp"
#include "histogen/nn/param.hpp"
#include "histogen/nn/precision.hpp"

namespace histogen::nn {

// Largest group count <= preferred that divides the channel count.
inline Index norm_groups(Index channels, Index preferred) {
    Index g = std::min(preferred, channels);
    while (g > 1 && channels % g != 0) --g;
    return g;
}

// ---------------------------------------------------------------------------
// Free tensor ops
// ---------------------------------------------------------------------------

// im2col for NCHW input: output (Cin*K*K, B*Ho*Wo), column index b*HoWo + p.
template <class S>
void im2col(const Tensor<S>& x, int ksize, int stride, int pad, Tensor<S>& col) {
    const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const Index Ho = (H + 2 * pad - ksize) / stride + 1;
    const Index Wo = (W + 2 * pad - ksize) / stride + 1;
    col.resize({C * ksize * ksize, B * Ho * Wo});
    S* out = col.data();
    const Index cols = B * Ho * Wo;
    for (Index c = 0; c < C; ++c) {
        for (Index ky = 0; ky < ksize; ++ky) {
            for (Index kx = 0; kx < ksize; ++kx) {
                S* row = out + ((c * ksize + ky) * ksize + kx) * cols;
                for (Index b = 0; b < B; ++b) {
                    const S* src = x.data() + (b * C + c) * H * W;
                    for (Index oy = 0; oy < Ho; ++oy) {
                        const Index iy = oy * stride + ky - pad;
                        S* dst = row + (b * Ho + oy) * Wo;
                        if (iy < 0 || iy >= H) {
                            std::fill(dst, dst + Wo, S{0});
                            continue;
                        }
                        if (stride == 1) {
                            // contiguous span with zero padding at the edges
                            const Index shift = kx - pad;  // ix = ox + shift
                            const Index lo = std::max<Index>(0, -shift);
                            const Index hi = std::min<Index>(Wo, W - shift);
                            std::fill(dst, dst + lo, S{0});
                            if (hi > lo) {
                                std::copy(src + iy * W + lo + shift, src + iy * W + hi + shift,
                                          dst + lo);
                            }
                            std::fill(dst + std::max(lo, hi), dst + Wo, S{0});
                            continue;
                        }
                        for (Index ox = 0; ox < Wo; ++ox) {
                            const Index ix = ox * stride + kx - pad;
                            dst[ox] = (ix >= 0 && ix < W) ? src[iy * W + ix] : S{0};
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add inverse of im2col.
template <class S>
void col2im(const Tensor<S>& col, Index B, Index C, Index H, Index W, int ksize, int stride,
            int pad, Tensor<S>& dx) {
    const Index Ho = (H + 2 * pad - ksize) / stride + 1;
    const Index Wo = (W + 2 * pad - ksize) / stride + 1;
    dx.resize({B, C, H, W});
    dx.zero();
    const Index cols = B * Ho * Wo;
    const S* in = col.data();
    for (Index c = 0; c < C; ++c) {
        for (Index ky = 0; ky < ksize; ++ky) {
            for (Index kx = 0; kx < ksize; ++kx) {
                const S* row = in + ((c * ksize + ky) * ksize + kx) * cols;
                for (Index b = 0; b < B; ++b) {
                    S* dst = dx.data() + (b * C + c) * H * W;
                    for (Index oy = 0; oy < Ho; ++oy) {
                        const Index iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const S* src = row + (b * Ho + oy) * Wo;
                        if (stride == 1) {
                            const Index shift = kx - pad;
                            const Index lo = std::max<Index>(0, -shift);
                            const Index hi = std::min<Index>(Wo, W - shift);
                            S* d = dst + iy * W + shift;
                            for (Index ox = lo; ox < hi; ++ox) d[ox] += src[ox];
                            continue;
                        }
                        for (Index ox = 0; ox < Wo; ++ox) {
                            const Index ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < W) dst[iy * W + ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

template <class S>
Tensor<S> upsample_nearest2x(const Tensor<S>& x) {
    const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<S> y({B, C, 2 * H, 2 * W});
    for (Index bc = 0; bc < B * C; ++bc) {
        const S* src = x.data() + bc * H * W;
        S* dst = y.data() + bc * 4 * H * W;
        for (Index i = 0; i < H; ++i) {
            for (Index j = 0; j < W; ++j) {
                const S v = src[i * W + j];
                dst[(2 * i) * 2 * W + 2 * j] = v;
                dst[(2 * i) * 2 * W + 2 * j + 1] = v;
                dst[(2 * i + 1) * 2 * W + 2 * j] = v;
                dst[(2 * i + 1) * 2 * W + 2 * j + 1] = v;
            }
        }
    }
    return y;
}

template <class S>
Tensor<S> upsample_nearest2x_backward(const Tensor<S>& dy) {
    const Index B = dy.dim(0), C = dy.dim(1), H2 = dy.dim(2), W2 = dy.dim(3);
    const Index H = H2 / 2, W = W2 / 2;
    Tensor<S> dx({B, C, H, W});
    for (Index bc = 0; bc < B * C; ++bc) {
        const S* src = dy.data() + bc * H2 * W2;
        S* dst = dx.data() + bc * H * W;
        for (Index i = 0; i < H; ++i) {
            for (Index j = 0; j < W; ++j) {
                dst[i * W + j] = src[(2 * i) * W2 + 2 * j] + src[(2 * i) * W2 + 2 * j + 1] +
                                 src[(2 * i + 1) * W2 + 2 * j] + src[(2 * i + 1) * W2 + 2 * j + 1];
            }
        }
    }
    return dx;
}

// Sinusoidal timestep embedding, half sine / half cosine with log-spaced
// frequencies.
template <class S>
Tensor<S> sinusoidal_embedding(const std::vector<double>& t, Index dim) {
    const Index half = dim / 2;
    Tensor<S> out({static_cast<Index>(t.size()), dim});
    for (Index b = 0; b < out.dim(0); ++b) {
        for (Index j = 0; j < half; ++j) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
            const double a = t[static_cast<std::size_t>(b)] * freq;
            out(b, j) = static_cast<S>(std::sin(a));
            out(b, half + j) = static_cast<S>(std::cos(a));
        }
        if (dim % 2 == 1) out(b, dim - 1) = S{0};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layers (forward caches what backward needs; backward accumulates grads)
// ---------------------------------------------------------------------------

template <class S>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(Index in_ch, Index out_ch, int ksize, int stride, int pad, Rng& rng,
           const Precision<S>* prec, bool zero_init = false)
        : in_(in_ch), out_(out_ch), k_(ksize), stride_(stride), pad_(pad), prec_(prec) {
        weight.init({out_ch, in_ch, ksize, ksize});
        bias.init({out_ch});
        if (!zero_init) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(in_ch * ksize * ksize));
            for (Index i = 0; i < weight.value.size(); ++i) {
                weight.value[i] = static_cast<S>(scale * rng.normal());
            }
        }
    }

    Tensor<S> forward(const Tensor<S>& x) {
        if (x.dim(1) != in_) {
            throw ShapeError("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                             x.shape_str());
        }
        x_cache_ = x;
        w_used_ = prec_ && prec_->active() ? prec_->cast(weight.value) : weight.value;

        const Index B = x.dim(0), H = x.dim(2), W = x.dim(3);
        const Index Ho = (H + 2 * pad_ - k_) / stride_ + 1;
        const Index Wo = (W + 2 * pad_ - k_) / stride_ + 1;
        Tensor<S> col;
        im2col(x, k_, stride_, pad_, col);
        if (prec_) prec_->q(col);

        Tensor<S> ymat({out_, B * Ho * Wo});
        ymat.mat(out_, B * Ho * Wo).noalias() =
            w_used_.mat(out_, in_ * k_ * k_) * col.mat(in_ * k_ * k_, B * Ho * Wo);

        Tensor<S> y({B, out_, Ho, Wo});
        const Index hw = Ho * Wo;
        for (Index b = 0; b < B; ++b) {
            for (Index co = 0; co < out_; ++co) {
                const S* src = ymat.data() + co * B * hw + b * hw;
                S* dst = y.data() + (b * out_ + co) * hw;
                const S bv = bias.value[co];
                for (Index p = 0; p < hw; ++p) dst[p] = src[p] + bv;
            }
        }
        if (prec_) prec_->q(y);
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy) {
        const Index B = x_cache_.dim(0), H = x_cache_.dim(2), W = x_cache_.dim(3);
        const Index Ho = dy.dim(2), Wo = dy.dim(3), hw = Ho * Wo;

        Tensor<S> dymat({out_, B * hw});
        for (Index b = 0; b < B; ++b) {
            for (Index co = 0; co < out_; ++co) {
                const S* src = dy.data() + (b * out_ + co) * hw;
                S* dst = dymat.data() + co * B * hw + b * hw;
                std::copy(src, src + hw, dst);
            }
        }

        Tensor<S> col;
        im2col(x_cache_, k_, stride_, pad_, col);
        if (prec_) prec_->q(col);

        const Index K = in_ * k_ * k_;
        weight.grad.mat(out_, K).noalias() += dymat.mat(out_, B * hw) * col.mat(K, B * hw).transpose();
        for (Index co = 0; co < out_; ++co) {
            bias.grad[co] += dymat.mat(out_, B * hw).row(co).sum();
        }

        Tensor<S> dcol({K, B * hw});
        dcol.mat(K, B * hw).noalias() =
            w_used_.mat(out_, K).transpose() * dymat.mat(out_, B * hw);
        Tensor<S> dx;
        col2im(dcol, B, in_, H, W, k_, stride_, pad_, dx);
        if (prec_) prec_->q(dx);
        return dx;
    }

    void collect(const std::string& prefix, NamedParams<S>& out) {
        out.emplace_back(prefix + ".weight", &weight);
        out.emplace_back(prefix + ".bias", &bias);
    }

    Parameter<S> weight, bias;

private:
    Index in_ = 0, out_ = 0;
    int k_ = 3, stride_ = 1, pad_ = 1;
    const Precision<S>* prec_ = nullptr;
    Tensor<S> x_cache_, w_used_;
};

template <class S>
class Linear {
public:
    Linear() = default;
    Linear(Index in_dim, Index out_dim, bool with_bias, Rng& rng, const Precision<S>* prec,
           bool zero_init = false)
        : in_(in_dim), out_(out_dim), with_bias_(with_bias), prec_(prec) {
        weight.init({out_dim, in_dim});
        if (with_bias) bias.init({out_dim});
        if (!zero_init) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
            for (Index i = 0; i < weight.value.size(); ++i) {
                weight.value[i] = static_cast<S>(scale * rng.normal());
            }
        }
    }

    // x: (N, in) as any tensor whose trailing dim is in_.
    Tensor<S> forward(const Tensor<S>& x) {
        const Index N = x.size() / in_;
        x_cache_ = x;
        w_used_ = prec_ && prec_->active() ? prec_->cast(weight.value) : weight.value;
        Tensor<S> y({N, out_});
        y.mat(N, out_).noalias() = x.mat(N, in_) * w_used_.mat(out_, in_).transpose();
        if (with_bias_) {
            y.mat(N, out_).rowwise() += bias.value.mat(1, out_).row(0);
        }
        if (prec_) prec_->q(y);
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy) {
        const Index N = dy.size() / out_;
        weight.grad.mat(out_, in_).noalias() +=
            dy.mat(N, out_).transpose() * x_cache_.mat(N, in_);
        if (with_bias_) {
            bias.grad.mat(1, out_).row(0) += dy.mat(N, out_).colwise().sum();
        }
        Tensor<S> dx;
        dx.resize(x_cache_.dims_vec());
        dx.mat(N, in_).noalias() = dy.mat(N, out_) * w_used_.mat(out_, in_);
        if (prec_) prec_->q(dx);
        return dx;
    }

    void collect(const std::string& prefix, NamedParams<S>& out) {
        out.emplace_back(prefix + ".weight", &weight);
        if (with_bias_) out.emplace_back(prefix + ".bias", &bias);
    }

    Parameter<S> weight, bias;

private:
    Index in_ = 0, out_ = 0;
    bool with_bias_ = true;
    const Precision<S>* prec_ = nullptr;
    Tensor<S> x_cache_, w_used_;
};

// Normalization statistics stay in full precision even under mixed16; only
// the output is rounded.
template <class S>
class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(Index channels, Index groups, const Precision<S>* prec, double eps = 1e-5)
        : c_(channels), g_(groups), eps_(eps), prec_(prec) {
        if (channels % groups != 0) throw ConfigError("GroupNorm: channels % groups != 0");
        gamma.init({channels});
        beta.init({channels});
        gamma.value.fill(S{1});
    }

    Tensor<S> forward(const Tensor<S>& x) {
        const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        const Index cpg = C / g_, n = cpg * HW;
        xhat_.resize(x.dims_vec());
        inv_std_.resize({B, g_});
        Tensor<S> y;
        y.resize(x.dims_vec());
        using Seg = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
        using CSeg = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
        for (Index b = 0; b < B; ++b) {
            for (Index g = 0; g < g_; ++g) {
                const Index off = (b * C + g * cpg) * HW;
                CSeg src(x.data() + off, n);
                const S mean = src.mean();
                const double var = static_cast<double>((src - mean).square().sum()) /
                                   static_cast<double>(n);
                const double inv = 1.0 / std::sqrt(var + eps_);
                inv_std_(b, g) = static_cast<S>(inv);
                Seg xh(xhat_.data() + off, n);
                xh = (src - static_cast<S>(mean)) * static_cast<S>(inv);
                for (Index cc = 0; cc < cpg; ++cc) {
                    Seg dst(y.data() + off + cc * HW, HW);
                    CSeg xhc(xhat_.data() + off + cc * HW, HW);
                    dst = gamma.value[g * cpg + cc] * xhc + beta.value[g * cpg + cc];
                }
            }
        }
        if (prec_) prec_->q(y);
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy) {
        const Index B = dy.dim(0), C = dy.dim(1), HW = dy.dim(2) * dy.dim(3);
        const Index cpg = C / g_, n = cpg * HW;
        Tensor<S> dx;
        dx.resize(dy.dims_vec());
        using Seg = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
        using CSeg = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
        for (Index b = 0; b < B; ++b) {
            for (Index g = 0; g < g_; ++g) {
                const Index off = (b * C + g * cpg) * HW;
                double sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (Index cc = 0; cc < cpg; ++cc) {
                    CSeg dyc(dy.data() + off + cc * HW, HW);
                    CSeg xhc(xhat_.data() + off + cc * HW, HW);
                    const double ga = static_cast<double>(gamma.value[g * cpg + cc]);
                    const double dy_sum = dyc.sum();
                    const double dyxh_sum = (dyc * xhc).sum();
                    sum_dxhat += ga * dy_sum;
                    sum_dxhat_xhat += ga * dyxh_sum;
                    gamma.grad[g * cpg + cc] += static_cast<S>(dyxh_sum);
                    beta.grad[g * cpg + cc] += static_cast<S>(dy_sum);
                }
                const S inv = inv_std_(b, g);
                const S c1 = static_cast<S>(sum_dxhat / n);
                const S c2 = static_cast<S>(sum_dxhat_xhat / n);
                for (Index cc = 0; cc < cpg; ++cc) {
                    CSeg dyc(dy.data() + off + cc * HW, HW);
                    CSeg xhc(xhat_.data() + off + cc * HW, HW);
                    Seg dst(dx.data() + off + cc * HW, HW);
                    dst = inv * (gamma.value[g * cpg + cc] * dyc - c1 - xhc * c2);
                }
            }
        }
        if (prec_) prec_->q(dx);
        return dx;
    }

    void collect(const std::string& prefix, NamedParams<S>& out) {
        out.emplace_back(prefix + ".gamma", &gamma);
        out.emplace_back(prefix + ".beta", &beta);
    }

    Parameter<S> gamma, beta;

private:
    Index c_ = 0, g_ = 1;
    double eps_ = 1e-5;
    const Precision<S>* prec_ = nullptr;
    Tensor<S> xhat_, inv_std_;
};

// Row-wise layer norm over the trailing dimension.
template <class S>
class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(Index dim, const Precision<S>* prec, double eps = 1e-5)
        : d_(dim), eps_(eps), prec_(prec) {
        gamma.init({dim});
        beta.init({dim});
        gamma.value.fill(S{1});
    }

    Tensor<S> forward(const Tensor<S>& x) {
        const Index N = x.size() / d_;
        xhat_.resize({N, d_});
        inv_std_.resize({N});
        Tensor<S> y;
        y.resize(x.dims_vec());
        using Seg = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
        using CSeg = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
        CSeg ga(gamma.value.data(), d_);
        CSeg be(beta.value.data(), d_);
        for (Index r = 0; r < N; ++r) {
            CSeg src(x.data() + r * d_, d_);
            const S mean = src.mean();
            const double var = static_cast<double>((src - mean).square().sum()) /
                               static_cast<double>(d_);
            const double inv = 1.0 / std::sqrt(var + eps_);
            inv_std_[r] = static_cast<S>(inv);
            Seg xh(xhat_.data() + r * d_, d_);
            xh = (src - static_cast<S>(mean)) * static_cast<S>(inv);
            Seg dst(y.data() + r * d_, d_);
            dst = ga * xh + be;
        }
        if (prec_) prec_->q(y);
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy) {
        const Index N = dy.size() / d_;
        Tensor<S> dx;
        dx.resize(dy.dims_vec());
        using Seg = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
        using CSeg = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
        CSeg ga(gamma.value.data(), d_);
        Seg dga(gamma.grad.data(), d_);
        Seg dbe(beta.grad.data(), d_);
        for (Index r = 0; r < N; ++r) {
            CSeg dyr(dy.data() + r * d_, d_);
            CSeg xh(xhat_.data() + r * d_, d_);
            const Eigen::Array<S, Eigen::Dynamic, 1> dxh = dyr * ga;
            const S sum_dxhat = dxh.sum();
            const S sum_dxhat_xhat = (dxh * xh).sum();
            dga += dyr * xh;
            dbe += dyr;
            Seg dst(dx.data() + r * d_, d_);
            dst = inv_std_[r] * (dxh - sum_dxhat / S(d_) - xh * (sum_dxhat_xhat / S(d_)));
        }
        if (prec_) prec_->q(dx);
        return dx;
    }

    void collect(const std::string& prefix, NamedParams<S>& out) {
        out.emplace_back(prefix + ".gamma", &gamma);
        out.emplace_back(prefix + ".beta", &beta);
    }

    Parameter<S> gamma, beta;

private:
    Index d_ = 0;
    double eps_ = 1e-5;
    const Precision<S>* prec_ = nullptr;
    Tensor<S> xhat_, inv_std_;
};

template <class S>
class SiLU {
public:
    explicit SiLU(const Precision<S>* prec = nullptr) : prec_(prec) {}

    Tensor<S> forward(const Tensor<S>& x) {
        x_cache_ = x;
        Tensor<S> y;
        y.resize(x.dims_vec());
        y.arr() = x.arr() / (S(1) + (-x.arr()).exp());
        if (prec_) prec_->q(y);
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy) {
        Tensor<S> dx;
        dx.resize(dy.dims_vec());
        const Eigen::Array<S, Eigen::Dynamic, 1> sig =
            (S(1) + (-x_cache_.arr()).exp()).inverse();
        dx.arr() = dy.arr() * sig * (S(1) + x_cache_.arr() * (S(1) - sig));
        if (prec_) prec_->q(dx);
        return dx;
    }

private:
    const Precision<S>* prec_ = nullptr;
    Tensor<S> x_cache_;
};

// tanh-approximated GELU; forward and backward use the same approximation.
template <class S>
class Gelu {
public:
    explicit Gelu(const Precision<S>* prec = nullptr) : prec_(prec) {}

    static constexpr double kSqrt2OverPi = 0.7978845608028654;
    static constexpr double kCubic = 0.044715;

    Tensor<S> forward(const Tensor<S>& x) {
        x_cache_ = x;
        Tensor<S> y;
        y.resize(x.dims_vec());
        const auto xa = x.arr();
        const Eigen::Array<S, Eigen::Dynamic, 1> t =
            (S(kSqrt2OverPi) * (xa + S(kCubic) * xa.cube())).tanh();
        y.arr() = S(0.5) * xa * (S(1) + t);
        if (prec_) prec_->q(y);
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy) {
        Tensor<S> dx;
        dx.resize(dy.dims_vec());
        const auto xa = x_cache_.arr();
        const Eigen::Array<S, Eigen::Dynamic, 1> t =
            (S(kSqrt2OverPi) * (xa + S(kCubic) * xa.cube())).tanh();
        const Eigen::Array<S, Eigen::Dynamic, 1> du =
            S(kSqrt2OverPi) * (S(1) + S(3 * kCubic) * xa.square());
        dx.arr() = dy.arr() * (S(0.5) * (S(1) + t) + S(0.5) * xa * (S(1) - t.square()) * du);
        if (prec_) prec_->q(dx);
        return dx;
    }

private:
    const Precision<S>* prec_ = nullptr;
    Tensor<S> x_cache_;
};

}  // namespace histogen::nn
