#pragma once

#include <vector>

#include "mcactrl/core/tensor.hpp"

namespace mcactrl {

/// Per-step noise rates and their running products. Index -1 denotes the clean
/// signal (alpha = 1), which is where a full denoising run ends.
struct NoiseSchedule {
    int total_steps = 0;
    std::vector<double> betas;
    std::vector<double> alphas_cum;

    /// Cumulative alpha at step `t`; `t == -1` yields 1.
    double alpha(int t) const;

    static NoiseSchedule from_betas(std::vector<double> betas);
};

/// Linearly spaced betas. Defaults match the conventional 1000-step schedule.
NoiseSchedule make_noise_schedule(int total_steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

/// Image-shaped state carried through the diffusion chain. Held in double so
/// that chained closed-form updates stay exact to well below float rounding.
struct LatentState {
    Shape shape;
    std::vector<double> values;
    int step = -1;

    LatentState() = default;
    LatentState(Shape s, std::vector<double> v, int t = -1);

    static LatentState from_tensor(const Tensor& t, int step = -1);
    Tensor to_tensor() const;

    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    bool all_finite() const;
};

double max_abs_diff(const LatentState& a, const LatentState& b);

LatentState markov_step(const LatentState& z_prev, double beta_t, const LatentState& noise);

LatentState q_sample(const LatentState& z0, int t, const LatentState& noise, const NoiseSchedule& sched);

/// Deterministic (eta = 0) DDIM transition from step `t` to `t_prev`. Works in
/// both directions; `t_prev == -1` targets the clean signal.
LatentState ddim_step(const LatentState& z_t, const LatentState& eps, int t, int t_prev, const NoiseSchedule& sched);

/// Uniformly spaced schedule indices for an `steps`-step sampler, noisiest first.
std::vector<int> ddim_timesteps(int steps, int total_steps);

}  // namespace mcactrl
