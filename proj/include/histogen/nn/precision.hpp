#pragma once

#include <string>

#include "histogen/core/errors.hpp"
#include "histogen/core/half.hpp"
#include "histogen/core/tensor.hpp"

namespace histogen::nn {

enum class Compute { Full32, Mixed16 };
enum class LossScaling { None, Dynamic };

inline std::string to_string(Compute c) { return c == Compute::Full32 ? "full32" : "mixed16"; }
inline Compute compute_from_string(const std::string& s) {
    if (s == "full32") return Compute::Full32;
    if (s == "mixed16") return Compute::Mixed16;
    throw ConfigError("invalid precision '" + s + "' (expected full32|mixed16)");
}
inline std::string to_string(LossScaling l) { return l == LossScaling::None ? "none" : "dynamic"; }
inline LossScaling loss_scaling_from_string(const std::string& s) {
    if (s == "none") return LossScaling::None;
    if (s == "dynamic") return LossScaling::Dynamic;
    throw ConfigError("invalid loss_scaling '" + s + "' (expected none|dynamic)");
}

struct PrecisionPolicy {
    Compute compute = Compute::Full32;
    LossScaling loss_scaling = LossScaling::None;
    // Always true: there is no implicit, device-count-dependent dtype
    // selection anywhere; every mixed-precision boundary is a q()/cast()
    // call on this object.
    bool explicit_casts = true;
};

// The single cast point for the emulated mixed16 path: values are rounded
// through IEEE binary16 at region boundaries while master weights and
// accumulation stay in fp32. For double-scalar instantiations (gradient
// checks) mixed16 is rejected at configuration time, so q() is a no-op.
template <class S>
class Precision {
public:
    Precision() = default;
    explicit Precision(const PrecisionPolicy& p) { configure(p); }

    void configure(const PrecisionPolicy& p) {
        if (p.compute == Compute::Mixed16 && sizeof(S) != sizeof(float)) {
            throw ConfigError("mixed16 requires the float32 scalar instantiation");
        }
        policy_ = p;
    }

    const PrecisionPolicy& policy() const { return policy_; }
    bool active() const { return policy_.compute == Compute::Mixed16; }

    // In-place round through half precision (activation boundary).
    void q(Tensor<S>& t) const {
        if (!active()) return;
        for (Index i = 0; i < t.size(); ++i) {
            t[i] = static_cast<S>(round_to_half(static_cast<float>(t[i])));
        }
    }

    // Rounded copy (weight entering a mixed-precision GEMM).
    Tensor<S> cast(const Tensor<S>& t) const {
        Tensor<S> out = t;
        q(out);
        return out;
    }

private:
    PrecisionPolicy policy_;
};

// Dynamic loss scaling: halve on non-finite gradients (skipping the step),
// double after a run of good steps.
class LossScaler {
public:
    explicit LossScaler(bool enabled, double init_scale = 4096.0)
        : enabled_(enabled), scale_(enabled ? init_scale : 1.0) {}

    double scale() const { return scale_; }
    bool enabled() const { return enabled_; }

    // Returns true when the step should be applied.
    bool update(bool grads_finite) {
        if (!enabled_) return grads_finite;
        if (!grads_finite) {
            scale_ = std::max(1.0, scale_ / 2.0);
            good_streak_ = 0;
            return false;
        }
        if (++good_streak_ >= kGrowthInterval && scale_ < kMaxScale) {
            scale_ *= 2.0;
            good_streak_ = 0;
        }
        return true;
    }

    void restore(double scale, int streak) {
        scale_ = scale;
        good_streak_ = streak;
    }
    int good_streak() const { return good_streak_; }

private:
    static constexpr int kGrowthInterval = 200;
    static constexpr double kMaxScale = 65536.0;
    bool enabled_;
    double scale_;
    int good_streak_ = 0;
};

}  // namespace histogen::nn
