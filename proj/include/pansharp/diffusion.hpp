#pragma once

#include <cmath>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace pansharp {

// Linear-beta schedule. alpha_bar[t-1] = prod_{s<=t} (1 - beta_s); timesteps
// are 1-based, alpha_bar_0 = 1 is implicit in the sampler.
struct NoiseSchedule {
    int64_t T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;
    std::vector<int64_t> ddim_steps;  // strictly increasing, last == T

    double abar(int64_t t) const {
        if (t == 0) return 1.0;
        if (t < 1 || t > T)
            throw contract_error("timestep " + std::to_string(t) + " outside [0, " +
                                 std::to_string(T) + "]");
        return alpha_bar[static_cast<size_t>(t - 1)];
    }
};

inline NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end,
                                   int64_t ddim_count) {
    if (ddim_count < 1 || ddim_count > T)
        throw config_error("ddim_count " + std::to_string(ddim_count) +
                           " must be in [1, T=" + std::to_string(T) + "]");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_end < beta_start)
        throw config_error("beta range must satisfy 0 < start <= end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int64_t t = 0; t < T; ++t) {
        double b = T == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * double(t) / double(T - 1);
        s.beta[static_cast<size_t>(t)] = b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = prod;
    }
    int64_t stride = T / ddim_count;
    s.ddim_steps.resize(static_cast<size_t>(ddim_count));
    for (int64_t k = 0; k < ddim_count; ++k)
        s.ddim_steps[static_cast<size_t>(k)] = T - (ddim_count - 1 - k) * stride;
    return s;
}

// Forward diffusion draw: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <class T>
Tensor<T> q_sample(const Tensor<T>& x0, int64_t t, const Tensor<T>& eps,
                   const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T)
        throw contract_error("q_sample: timestep " + std::to_string(t) + " outside [1, " +
                             std::to_string(sched.T) + "]");
    if (eps.shape() != x0.shape())
        throw shape_error("q_sample: eps shape " + shape_str(eps.shape()) +
                          " != x0 shape " + shape_str(x0.shape()));
    double ab = sched.abar(t);
    return mul_scalar(x0, static_cast<T>(std::sqrt(ab))) +
           mul_scalar(eps, static_cast<T>(std::sqrt(1.0 - ab)));
}

// Deterministic (eta = 0) DDIM update under the X0 parameterization: recover
// the implied noise from x_t and the prediction, then re-noise to t_prev.
template <class T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& x0_hat, int64_t t, int64_t t_prev,
                    const NoiseSchedule& sched) {
    if (t_prev < 0 || t <= t_prev || t > sched.T)
        throw contract_error("ddim_step: need T >= t > t_prev >= 0, got t=" +
                             std::to_string(t) + " t_prev=" + std::to_string(t_prev));
    double ab_t = sched.abar(t);
    if (ab_t == 1.0)
        throw numeric_error("ddim_step: alpha_bar == 1 at t=" + std::to_string(t) +
                            " (implied-noise division by zero)");
    double ab_p = sched.abar(t_prev);
    auto eps_hat = mul_scalar(x_t - mul_scalar(x0_hat, static_cast<T>(std::sqrt(ab_t))),
                              static_cast<T>(1.0 / std::sqrt(1.0 - ab_t)));
    return mul_scalar(x0_hat, static_cast<T>(std::sqrt(ab_p))) +
           mul_scalar(eps_hat, static_cast<T>(std::sqrt(1.0 - ab_p)));
}

// Reverse process: seeded Gaussian start, walk ddim_steps back to 0, then undo
// the residual parameterization. `model(x_t, pan, lrms_up, t)` returns the
// X0 prediction; the prediction is clamped to [-1, 1] before each update.
template <class T, class Model>
Tensor<T> sample(Model&& model, const Tensor<T>& pan, const Tensor<T>& lrms_up,
                 const NoiseSchedule& sched, uint64_t seed) {
    NoGradGuard ng;
    Rng rng(seed);
    Tensor<T> x = Tensor<T>::randn(lrms_up.shape(), rng);
    for (size_t k = sched.ddim_steps.size(); k-- > 0;) {
        int64_t t = sched.ddim_steps[k];
        int64_t t_prev = k > 0 ? sched.ddim_steps[k - 1] : 0;
        Tensor<T> x0_hat = model(x, pan, lrms_up, t);
        for (T v : x0_hat.data())
            if (!std::isfinite(static_cast<double>(v)))
                throw numeric_error("sample: non-finite denoiser output at t=" +
                                    std::to_string(t));
        x0_hat = clamp(x0_hat, T(-1), T(1));
        x = ddim_step(x, x0_hat, t, t_prev, sched);
    }
    return lrms_up + x;
}

}  // namespace pansharp
