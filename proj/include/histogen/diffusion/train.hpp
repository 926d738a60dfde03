#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "histogen/diffusion/schedule.hpp"
#include "histogen/diffusion/unet.hpp"

namespace histogen::diffusion {

enum class Devices { Single, Multi };

inline std::string to_string(Devices d) { return d == Devices::Single ? "single" : "multi"; }
inline Devices devices_from_string(const std::string& s) {
    if (s == "single") return Devices::Single;
    if (s == "multi") return Devices::Multi;
    throw ConfigError("invalid devices '" + s + "' (expected single|multi)");
}

struct TrainConfig {
    Index batch_size = 32;
    int grad_accum_steps = 1;
    long max_iterations = 5000;
    double lr = 1e-4;
    double condition_dropout_prob = 0.1;
    Devices devices = Devices::Single;
    int device_count = 1;
    std::uint64_t seed = 0;
    PrecisionPolicy precision;
    long checkpoint_every = 1000;
    long log_every = 25;

    Index effective_batch() const { return batch_size * grad_accum_steps; }

    // Device configuration is validated up front and never falls back
    // silently: requesting more devices than the build exposes is a hard
    // configuration error.
    void validate(int visible_devices) const {
        if (batch_size < 1 || grad_accum_steps < 1) {
            throw ConfigError("train: batch_size and grad_accum_steps must be >= 1");
        }
        if (!(condition_dropout_prob >= 0.0 && condition_dropout_prob < 1.0)) {
            throw ConfigError("train: condition_dropout_prob must lie in [0,1)");
        }
        if (devices == Devices::Multi) {
            if (device_count < 2) {
                throw ConfigError("train: devices=multi requires device_count >= 2");
            }
            if (device_count > visible_devices) {
                throw ConfigError(
                    "train: devices=multi with device_count=" + std::to_string(device_count) +
                    " but only " + std::to_string(visible_devices) +
                    " compute device(s) visible; set devices: single (no silent fallback)");
            }
        } else if (device_count != 1) {
            throw ConfigError("train: devices=single requires device_count == 1");
        }
    }
};

// Number of compute devices this build can drive. The reference
// implementation is the single-device CPU path.
inline int visible_device_count() { return 1; }

// One diffusion training objective evaluation:
//   L = mean((eps - eps_theta(q_sample(z0,t,eps), t, ctx))^2).
// Keeps the residual so backward() can run without re-doing the forward pass.
template <class S>
class DiffusionObjective {
public:
    explicit DiffusionObjective(UNet<S>& model) : model_(&model) {}

    double forward(const Tensor<S>& z0, const std::vector<int>& timesteps, const Tensor<S>& eps,
                   const Tensor<S>& ctx, const NoiseSchedule& sched) {
        if (!z0.same_shape(eps)) throw ShapeError("diffusion loss: eps shape mismatch");
        const Index B = z0.dim(0), per = z0.size() / B;
        Tensor<S> zt;
        zt.resize(z0.dims_vec());
        for (Index b = 0; b < B; ++b) {
            const double ab = sched.alpha_bar(timesteps[static_cast<std::size_t>(b)]);
            const S a = static_cast<S>(std::sqrt(ab));
            const S c = static_cast<S>(std::sqrt(1.0 - ab));
            for (Index i = 0; i < per; ++i) {
                zt[b * per + i] = a * z0[b * per + i] + c * eps[b * per + i];
            }
        }
        model_->precision().q(zt);
        Tensor<S> ctx_q = ctx;
        model_->precision().q(ctx_q);
        Tensor<S> eps_hat = model_->forward(zt, timesteps, ctx_q);

        residual_.resize(eps_hat.dims_vec());
        double mse = 0;
        for (Index i = 0; i < eps_hat.size(); ++i) {
            const double r = static_cast<double>(eps_hat[i]) - static_cast<double>(eps[i]);
            residual_[i] = static_cast<S>(r);
            mse += r * r;
        }
        return mse / static_cast<double>(eps_hat.size());
    }

    // loss_weight folds in loss scaling and micro-batch averaging; gradients
    // accumulate into the model parameters.
    void backward(double loss_weight = 1.0) {
        Tensor<S> deps;
        deps.resize(residual_.dims_vec());
        const double c = 2.0 * loss_weight / static_cast<double>(residual_.size());
        for (Index i = 0; i < deps.size(); ++i) {
            deps[i] = static_cast<S>(c * static_cast<double>(residual_[i]));
        }
        model_->precision().q(deps);
        model_->backward(deps);
    }

private:
    UNet<S>* model_;
    Tensor<S> residual_;
};

}  // namespace histogen::diffusion
