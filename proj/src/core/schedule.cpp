#include "mcactrl/core/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mcactrl/errors.hpp"

namespace mcactrl {

double NoiseSchedule::alpha(int t) const {
    if (t == -1) return 1.0;
    if (t < -1 || t >= total_steps) {
        throw std::invalid_argument("schedule step " + std::to_string(t) + " outside [0, " +
                                    std::to_string(total_steps) + ")");
    }
    return alphas_cum[static_cast<size_t>(t)];
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw std::invalid_argument("noise schedule needs at least one step");
    NoiseSchedule s;
    s.total_steps = static_cast<int>(betas.size());
    s.alphas_cum.reserve(betas.size());
    double running = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("beta " + std::to_string(b) + " outside (0, 1)");
        running *= 1.0 - b;
        s.alphas_cum.push_back(running);
    }
    s.betas = std::move(betas);
    return s;
}

NoiseSchedule make_noise_schedule(int total_steps, double beta_start, double beta_end) {
    if (total_steps < 1) throw std::invalid_argument("noise schedule needs T >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("noise schedule requires 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<size_t>(total_steps));
    for (int i = 0; i < total_steps; ++i) {
        const double frac = total_steps == 1 ? 0.0 : static_cast<double>(i) / (total_steps - 1);
        betas[static_cast<size_t>(i)] = beta_start + frac * (beta_end - beta_start);
    }
    return NoiseSchedule::from_betas(std::move(betas));
}

LatentState::LatentState(Shape s, std::vector<double> v, int t) : shape(std::move(s)), values(std::move(v)), step(t) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw std::invalid_argument("latent values do not match shape " + shape_str(shape));
    }
}

LatentState LatentState::from_tensor(const Tensor& t, int step) {
    return LatentState(t.shape, std::vector<double>(t.data.begin(), t.data.end()), step);
}

Tensor LatentState::to_tensor() const {
    Tensor t(shape);
    for (size_t i = 0; i < values.size(); ++i) t.data[i] = static_cast<float>(values[i]);
    return t;
}

bool LatentState::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double max_abs_diff(const LatentState& a, const LatentState& b) {
    if (a.shape != b.shape) throw std::invalid_argument("max_abs_diff: latent shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
    return m;
}

namespace {

void require_same_shape(const LatentState& a, const LatentState& b, const char* what) {
    if (a.shape != b.shape) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    }
}

LatentState affine(const LatentState& a, double ca, const LatentState& b, double cb, int step) {
    LatentState out(a.shape, std::vector<double>(a.values.size()), step);
    for (size_t i = 0; i < a.values.size(); ++i) out.values[i] = ca * a.values[i] + cb * b.values[i];
    return out;
}

}  // namespace

LatentState markov_step(const LatentState& z_prev, double beta_t, const LatentState& noise) {
    require_same_shape(z_prev, noise, "markov_step");
    if (!(beta_t >= 0.0 && beta_t <= 1.0)) throw std::invalid_argument("markov_step: beta outside [0, 1]");
    return affine(z_prev, std::sqrt(1.0 - beta_t), noise, std::sqrt(beta_t), z_prev.step + 1);
}

LatentState q_sample(const LatentState& z0, int t, const LatentState& noise, const NoiseSchedule& sched) {
    require_same_shape(z0, noise, "q_sample");
    if (t < 0 || t >= sched.total_steps) {
        throw std::invalid_argument("q_sample: step " + std::to_string(t) + " out of range");
    }
    const double a = sched.alphas_cum[static_cast<size_t>(t)];
    return affine(z0, std::sqrt(a), noise, std::sqrt(1.0 - a), t);
}

LatentState ddim_step(const LatentState& z_t, const LatentState& eps, int t, int t_prev, const NoiseSchedule& sched) {
    require_same_shape(z_t, eps, "ddim_step");
    const double a_t = sched.alpha(t);
    const double a_prev = sched.alpha(t_prev);
    if (t_prev == t) {
        LatentState same = z_t;
        same.step = t_prev;
        return same;
    }
    if (a_t <= 0.0) throw SingularScheduleError("ddim_step: alpha at step " + std::to_string(t) + " is zero");
    const double sa = std::sqrt(a_t), sn = std::sqrt(1.0 - a_t);
    const double sa_prev = std::sqrt(a_prev), sn_prev = std::sqrt(1.0 - a_prev);
    LatentState out(z_t.shape, std::vector<double>(z_t.values.size()), t_prev);
    for (size_t i = 0; i < z_t.values.size(); ++i) {
        const double x0 = (z_t.values[i] - sn * eps.values[i]) / sa;
        out.values[i] = sa_prev * x0 + sn_prev * eps.values[i];
    }
    return out;
}

std::vector<int> ddim_timesteps(int steps, int total_steps) {
    if (steps < 0 || steps > total_steps) {
        throw std::invalid_argument("sampler steps must lie in [0, T]");
    }
    std::vector<int> out;
    out.reserve(static_cast<size_t>(steps));
    for (int i = steps - 1; i >= 0; --i) {
        out.push_back(static_cast<int>((static_cast<int64_t>(i) * total_steps) / steps));
    }
    return out;
}

}  // namespace mcactrl
