#pragma once

#include <type_traits>
#include <vector>

#include "histogen/diffusion/schedule.hpp"

namespace histogen::sample {

using diffusion::NoiseSchedule;

enum class TimestepSpacing { Uniform, Quadratic };

inline std::string to_string(TimestepSpacing s) {
    return s == TimestepSpacing::Uniform ? "uniform" : "quadratic";
}
inline TimestepSpacing spacing_from_string(const std::string& s) {
    if (s == "uniform") return TimestepSpacing::Uniform;
    if (s == "quadratic") return TimestepSpacing::Quadratic;
    throw ConfigError("invalid timestep spacing '" + s + "' (uniform|quadratic)");
}

struct SamplerConfig {
    int n_steps = 50;
    double eta = 0.0;             // 0 => fully deterministic given the seed
    double guidance_scale = 1.75; // s in eps_u + s*(eps_c - eps_u)
    std::uint64_t seed = 0;
    Index batch_size = 32;
    TimestepSpacing spacing = TimestepSpacing::Uniform;
};

// Strictly decreasing sub-sequence of [1..T] of length n_steps, first element
// exactly T. Uniform: t_j = T - j*floor(T/n). Quadratic concentrates steps
// near t=1.
inline std::vector<int> plan_timesteps(int T, int n_steps,
                                       TimestepSpacing spacing = TimestepSpacing::Uniform) {
    if (n_steps < 1 || n_steps > T) {
        throw ConfigError("plan_timesteps: need 1 <= n_steps <= T");
    }
    std::vector<int> plan(static_cast<std::size_t>(n_steps));
    if (spacing == TimestepSpacing::Uniform) {
        const int stride = T / n_steps;
        for (int j = 0; j < n_steps; ++j) plan[static_cast<std::size_t>(j)] = T - j * stride;
        return plan;
    }
    for (int j = 0; j < n_steps; ++j) {
        const double frac =
            n_steps == 1 ? 1.0
                         : static_cast<double>(n_steps - 1 - j) / static_cast<double>(n_steps - 1);
        plan[static_cast<std::size_t>(j)] = 1 + static_cast<int>(std::llround((T - 1) * frac * frac));
    }
    plan[0] = T;
    for (int j = 1; j < n_steps; ++j) {  // enforce strict decrease from the top
        auto& t = plan[static_cast<std::size_t>(j)];
        t = std::min(t, plan[static_cast<std::size_t>(j - 1)] - 1);
    }
    plan[static_cast<std::size_t>(n_steps - 1)] =
        std::max(plan[static_cast<std::size_t>(n_steps - 1)], 1);
    for (int j = n_steps - 2; j >= 1; --j) {  // and the >=1 floor from the bottom
        auto& t = plan[static_cast<std::size_t>(j)];
        t = std::max(t, plan[static_cast<std::size_t>(j + 1)] + 1);
    }
    return plan;
}

// Classifier-free guidance blend. s=1 and s=0 return the conditional and
// unconditional predictions bitwise.
template <class S>
Tensor<S> guided_eps(const Tensor<S>& eps_cond, const Tensor<S>& eps_uncond, double s) {
    if (!eps_cond.same_shape(eps_uncond)) throw ShapeError("guided_eps: shape mismatch");
    if (s == 1.0) return eps_cond;
    if (s == 0.0) return eps_uncond;
    Tensor<S> out;
    out.resize(eps_cond.dims_vec());
    for (Index i = 0; i < out.size(); ++i) {
        out[i] = static_cast<S>(static_cast<double>(eps_uncond[i]) +
                                s * (static_cast<double>(eps_cond[i]) -
                                     static_cast<double>(eps_uncond[i])));
    }
    return out;
}

// One DDIM update from t to t_prev (alpha_bar(0) == 1):
//   x0_hat = (z_t - sqrt(1-ab_t) eps) / sqrt(ab_t)
//   sigma  = eta sqrt((1-ab_p)/(1-ab_t)) sqrt(1 - ab_t/ab_p)
//   z_prev = sqrt(ab_p) x0_hat + sqrt(1-ab_p-sigma^2) eps + sigma noise
// eta=0 never touches the noise argument.
template <class S>
Tensor<S> ddim_step(const Tensor<S>& z_t, const Tensor<S>& eps, int t, int t_prev,
                    const NoiseSchedule& sched, double eta,
                    const std::type_identity_t<Tensor<S>>* noise = nullptr) {
    if (!(t > t_prev && t_prev >= 0)) {
        throw ConfigError("ddim_step: need t > t_prev >= 0, got t=" + std::to_string(t) +
                          " t_prev=" + std::to_string(t_prev));
    }
    if (!z_t.same_shape(eps)) throw ShapeError("ddim_step: eps shape mismatch");
    const double ab_t = sched.alpha_bar(t);
    const double ab_p = sched.alpha_bar(t_prev);
    const double sqrt_ab_t = std::sqrt(ab_t);
    const double sqrt_1m_ab_t = std::sqrt(1.0 - ab_t);

    double sigma = 0.0;
    if (eta > 0.0 && t_prev > 0) {
        sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
    }
    const double dir_coef_sq = 1.0 - ab_p - sigma * sigma;
    const double dir_coef = std::sqrt(std::max(0.0, dir_coef_sq));
    const double sqrt_ab_p = std::sqrt(ab_p);

    if (sigma > 0.0 && (!noise || !noise->same_shape(z_t))) {
        throw ShapeError("ddim_step: eta > 0 requires noise shaped like z_t");
    }

    Tensor<S> z_prev;
    z_prev.resize(z_t.dims_vec());
    for (Index i = 0; i < z_t.size(); ++i) {
        const double x0 =
            (static_cast<double>(z_t[i]) - sqrt_1m_ab_t * static_cast<double>(eps[i])) / sqrt_ab_t;
        double v = sqrt_ab_p * x0 + dir_coef * static_cast<double>(eps[i]);
        if (sigma > 0.0) v += sigma * static_cast<double>((*noise)[i]);
        z_prev[i] = static_cast<S>(v);
    }
    return z_prev;
}

}  // namespace histogen::sample
