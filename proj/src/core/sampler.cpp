#include "mcactrl/core/sampler.hpp"

#include <random>
#include <stdexcept>
#include <string>

namespace mcactrl {

void SamplerConfig::validate(const NoiseSchedule& sched) const {
    if (steps < 0 || steps > sched.total_steps) {
        throw std::invalid_argument("sampler steps " + std::to_string(steps) + " outside [0, " +
                                    std::to_string(sched.total_steps) + "]");
    }
    if (!(guidance_scale >= 0.0) || !(inversion_guidance >= 0.0)) {
        throw std::invalid_argument("guidance scales must be non-negative");
    }
}

namespace {

Tensor run_pass(const NoisePredictor& model, const Tensor& x, int t, const std::vector<TokenSeq>& tokens,
                const SamplerHook* hook, int step, GuidancePass pass) {
    const std::vector<int> ts(static_cast<size_t>(x.dim(0)), t);
    if (!hook) return model.predict(x, ts, tokens);
    const AttentionHook layer_hook = [&](int layer, std::span<const AttentionTriplet> batch,
                                         std::vector<Tensor>& outputs) { (*hook)(step, pass, layer, batch, outputs); };
    return model.predict(x, ts, tokens, &layer_hook);
}

}  // namespace

LatentState cfg_predict(const NoisePredictor& model, const LatentState& z, int t, const std::vector<TokenSeq>& tokens,
                        double scale, const SamplerHook* hook, int step, const std::vector<TokenSeq>* negative) {
    if (!(scale >= 0.0)) throw std::invalid_argument("guidance scale must be non-negative");
    const Tensor x = z.to_tensor();
    if (negative && negative->size() != tokens.size()) throw std::invalid_argument("one negative prompt per batch item");
    // Identical prompts make both passes equal, so the guided value is the conditional one.
    if (scale == 1.0 || (negative && *negative == tokens)) {
        return LatentState::from_tensor(run_pass(model, x, t, tokens, hook, step, GuidancePass::Conditional), t);
    }
    const std::vector<TokenSeq> null_tokens(negative ? 0 : tokens.size());
    const Tensor eps_u =
        run_pass(model, x, t, negative ? *negative : null_tokens, hook, step, GuidancePass::Unconditional);
    if (scale == 0.0) return LatentState::from_tensor(eps_u, t);
    const Tensor eps_c = run_pass(model, x, t, tokens, hook, step, GuidancePass::Conditional);
    LatentState out(eps_u.shape, std::vector<double>(eps_u.data.size()), t);
    for (size_t i = 0; i < out.values.size(); ++i) {
        const double u = eps_u.data[i];
        out.values[i] = u + scale * (static_cast<double>(eps_c.data[i]) - u);
    }
    return out;
}

std::vector<LatentState> ddim_sample(const NoisePredictor& model, const LatentState& z_T,
                                     const std::vector<TokenSeq>& tokens, const SamplerConfig& config,
                                     const NoiseSchedule& sched, const SamplerHook* hook) {
    config.validate(sched);
    const std::vector<int> ts = ddim_timesteps(config.steps, sched.total_steps);
    std::vector<LatentState> traj;
    traj.reserve(ts.size() + 1);
    LatentState z = z_T;
    if (!ts.empty()) z.step = ts.front();
    traj.push_back(z);
    for (size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
        LatentState eps;
        try {
            eps = cfg_predict(model, z, t, tokens, config.guidance_scale, hook, static_cast<int>(i));
        } catch (const std::exception& e) {
            throw std::runtime_error("sampling step " + std::to_string(i) + " (t=" + std::to_string(t) +
                                     "): " + e.what());
        }
        z = ddim_step(z, eps, t, t_prev, sched);
        traj.push_back(z);
    }
    return traj;
}

std::vector<LatentState> ddim_invert(const NoisePredictor& model, const LatentState& z0,
                                     const std::vector<TokenSeq>& tokens, const SamplerConfig& config,
                                     const NoiseSchedule& sched) {
    config.validate(sched);
    const std::vector<int> ts = ddim_timesteps(config.steps, sched.total_steps);
    std::vector<LatentState> traj(ts.size() + 1);
    LatentState z = z0;
    z.step = -1;
    traj.back() = z;
    for (size_t i = ts.size(); i-- > 0;) {
        const int t_from = i + 1 < ts.size() ? ts[i + 1] : -1;
        const int t_to = ts[i];
        // The noise estimate for the next level is taken at the current state.
        const LatentState eps = cfg_predict(model, z, t_to, tokens, config.inversion_guidance);
        z = ddim_step(z, eps, t_from, t_to, sched);
        traj[i] = z;
    }
    return traj;
}

TappedPrediction denoise_with_taps(const NoisePredictor& model, const LatentState& z, int t,
                                   const std::vector<TokenSeq>& tokens, const AttentionOverride& override) {
    const Tensor x = z.to_tensor();
    const std::vector<int> ts(static_cast<size_t>(x.dim(0)), t);
    TappedPrediction out;
    Tensor eps;
    if (override) {
        const AttentionHook hook = [&](int layer, std::span<const AttentionTriplet> batch, std::vector<Tensor>& outs) {
            for (size_t n = 0; n < batch.size(); ++n) outs[n] = override(layer, batch[n], outs[n]);
        };
        eps = model.predict(x, ts, tokens, &hook, &out.taps);
    } else {
        eps = model.predict(x, ts, tokens, nullptr, &out.taps);
    }
    out.eps = LatentState::from_tensor(eps, t);
    return out;
}

LatentState gaussian_latent(const Shape& shape, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    LatentState z(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape))));
    for (auto& v : z.values) v = dist(rng);
    return z;
}

}  // namespace mcactrl
