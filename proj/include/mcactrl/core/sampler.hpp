#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mcactrl/core/denoiser.hpp"
#include "mcactrl/core/schedule.hpp"

namespace mcactrl {

struct SamplerConfig {
    int steps = 50;
    double guidance_scale = 7.5;
    double inversion_guidance = 1.0;
    uint64_t seed = 0;

    /// Throws std::invalid_argument unless 0 <= steps <= T and both scales are >= 0.
    void validate(const NoiseSchedule& sched) const;
};

/// Which half of a guided prediction a forward pass belongs to.
enum class GuidancePass { Unconditional, Conditional };

/// Per-step attention override used by the samplers.
using SamplerHook = std::function<void(int step, GuidancePass pass, int layer, std::span<const AttentionTriplet> batch,
                                       std::vector<Tensor>& outputs)>;

/// eps_u + s * (eps_c - eps_u). With s == 1 only the conditional pass runs and
/// with s == 0 only the unconditional one, so both limits are exact. The
/// unconditional pass uses `negative` when given, else empty prompts; when
/// `negative` equals `tokens` only the conditional pass runs.
LatentState cfg_predict(const NoisePredictor& model, const LatentState& z, int t, const std::vector<TokenSeq>& tokens,
                        double scale, const SamplerHook* hook = nullptr, int step = 0,
                        const std::vector<TokenSeq>* negative = nullptr);

/// Deterministic DDIM sampling; returns the N+1 states from z_T to z_0.
std::vector<LatentState> ddim_sample(const NoisePredictor& model, const LatentState& z_T,
                                     const std::vector<TokenSeq>& tokens, const SamplerConfig& config,
                                     const NoiseSchedule& sched, const SamplerHook* hook = nullptr);

/// Deterministic DDIM inversion at `config.inversion_guidance`. The result is
/// indexed like a sampling trajectory: front() is Z_T and back() is z0.
std::vector<LatentState> ddim_invert(const NoisePredictor& model, const LatentState& z0,
                                     const std::vector<TokenSeq>& tokens, const SamplerConfig& config,
                                     const NoiseSchedule& sched);

/// Per-item override: (layer, triplet, default output) -> replacement.
using AttentionOverride = std::function<Tensor(int layer, const AttentionTriplet& triplet, const Tensor& default_out)>;

struct TappedPrediction {
    LatentState eps;
    ForwardTaps taps;
};

/// One unguided forward pass that records every self-attention triplet and
/// cross-attention map, optionally applying `override` to each item.
TappedPrediction denoise_with_taps(const NoisePredictor& model, const LatentState& z, int t,
                                   const std::vector<TokenSeq>& tokens, const AttentionOverride& override = {});

/// Standard-normal latent of the given shape from `seed`.
LatentState gaussian_latent(const Shape& shape, uint64_t seed);

}  // namespace mcactrl
