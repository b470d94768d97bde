#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mcactrl/core/tensor.hpp"

namespace mcactrl::testing {

// Double-precision attention that drops masked keys outright instead of
// penalising their logits.
inline Tensor reference_masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                         std::span<const uint8_t> key_mask, uint8_t fill_value) {
    const int heads = q.dim(0), nq = q.dim(1), nk = k.dim(1), d = q.dim(2), dv = v.dim(2);
    bool any_allowed = false;
    for (uint8_t m : key_mask) any_allowed = any_allowed || m != fill_value;
    Tensor out({heads, nq, dv});
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < nq; ++i) {
            std::vector<double> w(static_cast<size_t>(nk), 0.0);
            double best = -INFINITY;
            for (int j = 0; j < nk; ++j) {
                if (any_allowed && key_mask[static_cast<size_t>(j)] == fill_value) continue;
                double dot = 0.0;
                for (int c = 0; c < d; ++c) {
                    dot += static_cast<double>(q.data[static_cast<size_t>((h * nq + i) * d + c)]) *
                           k.data[static_cast<size_t>((h * nk + j) * d + c)];
                }
                w[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(d));
                best = std::max(best, w[static_cast<size_t>(j)]);
            }
            double total = 0.0;
            for (int j = 0; j < nk; ++j) {
                const bool keep = !(any_allowed && key_mask[static_cast<size_t>(j)] == fill_value);
                w[static_cast<size_t>(j)] = keep ? std::exp(w[static_cast<size_t>(j)] - best) : 0.0;
                total += w[static_cast<size_t>(j)];
            }
            for (int c = 0; c < dv; ++c) {
                double acc = 0.0;
                for (int j = 0; j < nk; ++j) {
                    acc += w[static_cast<size_t>(j)] * v.data[static_cast<size_t>((h * nk + j) * dv + c)];
                }
                out.data[static_cast<size_t>((h * nq + i) * dv + c)] = static_cast<float>(acc / total);
            }
        }
    }
    return out;
}

inline Tensor random_tensor(Shape s, std::mt19937& rng, float scale = 1.0f) {
    Tensor t(std::move(s));
    std::normal_distribution<float> g(0.0f, scale);
    for (float& x : t.data) x = g(rng);
    return t;
}

}  // namespace mcactrl::testing
