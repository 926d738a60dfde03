#pragma once

#include <cmath>
#include <vector>

#include "histogen/nn/param.hpp"

namespace histogen::nn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment buffers align with the parameter list by
// position (construction order is fixed), which is also how optimizer state
// round-trips through checkpoints.
template <class S>
class Adam {
public:
    Adam() = default;
    Adam(const NamedParams<S>& params, AdamConfig cfg) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (auto& [name, p] : params) {
            m_.push_back(Tensor<S>::zeros_like(p->value));
            v_.push_back(Tensor<S>::zeros_like(p->value));
        }
    }

    // grad_scale divides gradients before the update (gradient accumulation
    // weighting, mixed-precision loss unscaling).
    void step(const NamedParams<S>& params, double grad_scale = 1.0) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
        const S inv_scale = static_cast<S>(1.0 / grad_scale);
        const S lr_over_bc1 = static_cast<S>(cfg_.lr / bc1);
        const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
        const S eps = static_cast<S>(cfg_.eps);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter<S>& p = *params[i].second;
            const Eigen::Array<S, Eigen::Dynamic, 1> g = p.grad.arr() * inv_scale;
            m_[i].arr() = b1 * m_[i].arr() + (S(1) - b1) * g;
            v_[i].arr() = b2 * v_[i].arr() + (S(1) - b2) * g.square();
            p.value.arr() -=
                lr_over_bc1 * m_[i].arr() / (v_[i].arr().sqrt() * inv_sqrt_bc2 + eps);
        }
    }

    long step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    std::vector<Tensor<S>>& moments1() { return m_; }
    std::vector<Tensor<S>>& moments2() { return v_; }
    void restore_step_count(long t) { t_ = t; }

private:
    AdamConfig cfg_;
    std::vector<Tensor<S>> m_, v_;
    long t_ = 0;
};

}  // namespace histogen::nn
