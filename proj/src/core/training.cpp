#include "mcactrl/core/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace mcactrl {

double training_loss(const NoisePredictor& model, const LatentState& z0, int t, const LatentState& noise,
                     const TokenSeq& tokens, const NoiseSchedule& sched) {
    if (z0.shape != noise.shape) throw std::invalid_argument("training_loss: noise shape does not match z0");
    for (int tok : tokens) (void)Vocabulary::instance().word(tok);
    const LatentState zt = q_sample(z0, t, noise, sched);
    const Tensor x = zt.to_tensor();
    const std::vector<int> ts(static_cast<size_t>(x.dim(0)), t);
    const std::vector<TokenSeq> toks(static_cast<size_t>(x.dim(0)), tokens);
    const Tensor pred = model.predict(x, ts, toks);
    if (pred.shape != noise.shape) throw std::invalid_argument("training_loss: prediction shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < noise.values.size(); ++i) {
        const double d = noise.values[i] - pred.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(noise.values.size());
}

namespace {

struct AdamState {
    std::vector<Tensor> m, v;
    int64_t step = 0;
};

double learning_rate_at(const TrainingConfig& cfg, int step) {
    if (step < cfg.warmup_steps) return cfg.learning_rate * (step + 1) / cfg.warmup_steps;
    const int span = std::max(1, cfg.steps - cfg.warmup_steps);
    const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return cfg.learning_rate * (cfg.min_lr_fraction + (1.0 - cfg.min_lr_fraction) * cosine);
}

}  // namespace

TrainingResult train_toy_denoiser(const std::vector<TrainingExample>& dataset, const TrainingConfig& config,
                                  const NoiseSchedule& sched, const TrainingProgress& progress) {
    if (dataset.empty()) throw std::invalid_argument("train_toy_denoiser: empty dataset");
    if (config.steps < 0 || config.batch_size < 1) throw std::invalid_argument("train_toy_denoiser: bad step/batch");
    DenoiserConfig mc = config.model;
    mc.init_seed = config.seed;
    const Shape image_shape{mc.image_channels, mc.image_size, mc.image_size};
    for (const auto& ex : dataset) {
        if (ex.image.shape != image_shape) {
            throw std::invalid_argument("training image shape " + shape_str(ex.image.shape) + " does not match model");
        }
    }

    TrainingResult result{ToyDenoiser(mc), {}};
    ToyDenoiser& model = result.model;
    const auto& params = model.parameters();
    AdamState adam;
    for (const auto& [name, p] : params) {
        adam.m.emplace_back(p->value.shape);
        adam.v.emplace_back(p->value.shape);
    }
    std::vector<float> ema = model.flat_weights();

    std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + 1);
    std::uniform_int_distribution<size_t> pick(0, dataset.size() - 1);
    std::uniform_int_distribution<int> pick_t(0, sched.total_steps - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    const int bsz = config.batch_size;
    const int64_t per_image = shape_numel(image_shape);
    result.losses.reserve(static_cast<size_t>(config.steps));
    for (int step = 0; step < config.steps; ++step) {
        Tensor x({bsz, image_shape[0], image_shape[1], image_shape[2]});
        Tensor noise(x.shape);
        std::vector<int> ts(static_cast<size_t>(bsz));
        std::vector<TokenSeq> toks(static_cast<size_t>(bsz));
        for (int n = 0; n < bsz; ++n) {
            const TrainingExample& ex = dataset[pick(rng)];
            const int t = pick_t(rng);
            const double a = sched.alphas_cum[static_cast<size_t>(t)];
            const float sa = static_cast<float>(std::sqrt(a)), sn = static_cast<float>(std::sqrt(1.0 - a));
            for (int64_t i = 0; i < per_image; ++i) {
                const float e = gauss(rng);
                noise.data[static_cast<size_t>(n * per_image + i)] = e;
                x.data[static_cast<size_t>(n * per_image + i)] = sa * ex.image.data[static_cast<size_t>(i)] + sn * e;
            }
            ts[static_cast<size_t>(n)] = t;
            if (coin(rng) >= config.p_uncond) toks[static_cast<size_t>(n)] = ex.tokens;
        }

        for (const auto& [name, p] : params) {
            Tensor& g = p->ensure_grad();
            std::fill(g.data.begin(), g.data.end(), 0.0f);
        }
        const Var loss = ops::mse(model.forward(constant(std::move(x)), ts, toks), noise);
        backward(loss);

        double norm2 = 0.0;
        for (const auto& [name, p] : params) {
            for (float g : p->grad.data) norm2 += static_cast<double>(g) * g;
        }
        const double norm = std::sqrt(norm2);
        const float clip = (config.grad_clip > 0.0 && norm > config.grad_clip)
                               ? static_cast<float>(config.grad_clip / norm)
                               : 1.0f;

        ++adam.step;
        const double lr = learning_rate_at(config, step);
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
        for (size_t pi = 0; pi < params.size(); ++pi) {
            Tensor& w = params[pi].second->value;
            const Tensor& g = params[pi].second->grad;
            Tensor& m = adam.m[pi];
            Tensor& v = adam.v[pi];
            for (size_t i = 0; i < w.data.size(); ++i) {
                const double gi = static_cast<double>(g.data[i]) * clip;
                m.data[i] = static_cast<float>(b1 * m.data[i] + (1.0 - b1) * gi);
                v.data[i] = static_cast<float>(b2 * v.data[i] + (1.0 - b2) * gi * gi);
                const double mh = m.data[i] / c1, vh = v.data[i] / c2;
                w.data[i] -= static_cast<float>(lr * mh / (std::sqrt(vh) + eps));
            }
        }
        if (config.ema_decay > 0.0) {
            // Warm-started decay so early weights do not dominate short runs.
            const double decay = std::min(config.ema_decay, (1.0 + step) / (10.0 + step));
            size_t off = 0;
            for (const auto& [name, p] : params) {
                for (float wv : p->value.data) {
                    ema[off] = static_cast<float>(decay * ema[off] + (1.0 - decay) * wv);
                    ++off;
                }
            }
        }

        const double lv = loss->value.data[0];
        result.losses.push_back(lv);
        if (progress) progress(step, lv);
    }
    if (config.ema_decay > 0.0 && config.steps > 0) model.set_flat_weights(ema);
    for (const auto& [name, p] : params) p->grad = Tensor{};
    return result;
}

std::vector<double> smooth_losses(const std::vector<double>& losses, int window) {
    if (window < 1) throw std::invalid_argument("smoothing window must be positive");
    std::vector<double> out(losses.size());
    double acc = 0.0;
    for (size_t i = 0; i < losses.size(); ++i) {
        acc += losses[i];
        if (i >= static_cast<size_t>(window)) acc -= losses[i - static_cast<size_t>(window)];
        out[i] = acc / static_cast<double>(std::min(i + 1, static_cast<size_t>(window)));
    }
    return out;
}

}  // namespace mcactrl
