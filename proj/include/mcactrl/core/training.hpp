#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mcactrl/core/denoiser.hpp"
#include "mcactrl/core/schedule.hpp"

namespace mcactrl {

/// One image in model units ([-1, 1], shape [C, H, W]) with its caption.
struct TrainingExample {
    Tensor image;
    TokenSeq tokens;
};

struct TrainingConfig {
    int steps = 2000;
    int batch_size = 16;
    double learning_rate = 2e-3;
    int warmup_steps = 100;
    double min_lr_fraction = 0.1;
    double grad_clip = 1.0;
    /// Probability of replacing a caption by the null token (enables guidance).
    double p_uncond = 0.1;
    /// Exponential moving average of the weights; 0 disables it.
    double ema_decay = 0.999;
    uint64_t seed = 0;
    DenoiserConfig model{};
};

struct TrainingResult {
    ToyDenoiser model;
    /// Raw per-step batch losses.
    std::vector<double> losses;
};

/// Mean squared error between `noise` and the prediction at q_sample(z0, t, noise).
double training_loss(const NoisePredictor& model, const LatentState& z0, int t, const LatentState& noise,
                     const TokenSeq& tokens, const NoiseSchedule& sched);

using TrainingProgress = std::function<void(int step, double loss)>;

TrainingResult train_toy_denoiser(const std::vector<TrainingExample>& dataset, const TrainingConfig& config,
                                  const NoiseSchedule& sched, const TrainingProgress& progress = {});

/// Trailing moving average with window `window` (shorter at the start).
std::vector<double> smooth_losses(const std::vector<double>& losses, int window);

}  // namespace mcactrl
