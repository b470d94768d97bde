#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mcactrl/core/tensor.hpp"

namespace mcactrl {

// Minimal tape-free reverse-mode autodiff: every op result keeps its parents
// and a closure that pushes its gradient into them. Only what the toy
// denoiser needs is implemented.

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad();
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor t);
Var parameter(Tensor t);

bool grad_enabled();

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Backpropagates from a scalar root, accumulating into every reachable grad.
void backward(const Var& root);

/// Head-major attention kernel on [heads, tokens, d] tensors. Writes the
/// softmax probabilities [heads, nq, nk] when `probs` is non-null.
/// `key_bias`, when given, is added to every query's logit for each key.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* probs = nullptr,
                            std::span<const float> key_bias = {});

/// [tokens, heads*d] row block -> [heads, tokens, d].
Tensor split_heads(const float* rows, int tokens, int heads, int head_dim);
/// [heads, tokens, d] -> [tokens, heads*d] written at `rows`.
void merge_heads(const Tensor& heads_major, float* rows);

namespace ops {

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, float eps = 1e-5f);
Var silu(const Var& x);
Var add(const Var& a, const Var& b);
/// x [B,C,H,W] + e [B,C] broadcast over space.
Var add_channel(const Var& x, const Var& e);
/// Affine map over the last axis: x [..., in] * w [in, out] + b [out].
Var linear(const Var& x, const Var& w, const Var& b);
Var upsample2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);
/// [B,C,H,W] -> [B,H*W,C]
Var to_tokens(const Var& x);
/// [B,H*W,C] -> [B,C,H,W]
Var from_tokens(const Var& x, int height, int width);
/// Row lookup into table [V, E] -> [B, L, E]; rows of `table` receive gradient.
Var embedding(const Var& table, const std::vector<std::vector<int>>& ids);
/// x [B, L, E] + pos [L, E]
Var add_positional(const Var& x, const Var& pos);
/// Multi-head attention on token-major tensors q [B,Nq,H*d], k/v [B,Nk,H*d].
Var attention(const Var& q, const Var& k, const Var& v, int heads);
/// Mean squared error against a constant target; returns a 1-element tensor.
Var mse(const Var& pred, const Tensor& target);

}  // namespace ops

}  // namespace mcactrl
