#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "histogen/core/errors.hpp"
#include "histogen/core/tensor.hpp"

namespace histogen::diffusion {

enum class ScheduleKind { Linear };

inline std::string to_string(ScheduleKind k) {
    (void)k;
    return "linear";
}
inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    throw ConfigError("unknown schedule kind '" + s + "' (supported: linear)");
}

// beta/alpha/alpha_bar tables in double precision. alpha_bar(0) == 1 by
// convention; alpha_bar is strictly decreasing.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    int T() const { return static_cast<int>(betas_.size()); }
    ScheduleKind kind() const { return kind_; }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }

    double beta(int t) const {
        check_t(t);
        return betas_[static_cast<std::size_t>(t - 1)];
    }
    double alpha(int t) const {
        check_t(t);
        return 1.0 - betas_[static_cast<std::size_t>(t - 1)];
    }
    double alpha_bar(int t) const {
        if (t == 0) return 1.0;
        check_t(t);
        return alpha_bars_[static_cast<std::size_t>(t - 1)];
    }

    friend NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_start,
                                       double beta_end);

private:
    void check_t(int t) const {
        if (t < 1 || t > T()) {
            throw ConfigError("timestep " + std::to_string(t) + " outside [1," +
                              std::to_string(T()) + "]");
        }
    }

    ScheduleKind kind_ = ScheduleKind::Linear;
    double beta_start_ = 0, beta_end_ = 0;
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

inline NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.kind_ = kind;
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    s.betas_.resize(static_cast<std::size_t>(T));
    s.alpha_bars_.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        s.betas_[static_cast<std::size_t>(t)] = beta;
        prod *= 1.0 - beta;
        s.alpha_bars_[static_cast<std::size_t>(t)] = prod;
    }
    return s;
}

// Closed-form forward noising z_t = sqrt(ab_t) z0 + sqrt(1-ab_t) eps.
// t == 0 is the identity by the alpha_bar(0) = 1 convention.
template <class S>
Tensor<S> q_sample(const Tensor<S>& z0, int t, const Tensor<S>& eps, const NoiseSchedule& sched) {
    if (t < 0 || t > sched.T()) {
        throw ConfigError("q_sample: t outside [0," + std::to_string(sched.T()) + "]");
    }
    if (!z0.same_shape(eps)) throw ShapeError("q_sample: eps shape mismatch");
    const double ab = sched.alpha_bar(t);
    const S a = static_cast<S>(std::sqrt(ab));
    const S b = static_cast<S>(std::sqrt(1.0 - ab));
    Tensor<S> zt;
    zt.resize(z0.dims_vec());
    for (Index i = 0; i < z0.size(); ++i) zt[i] = a * z0[i] + b * eps[i];
    return zt;
}

}  // namespace histogen::diffusion
