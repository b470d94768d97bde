#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcactrl/core/autograd.hpp"
#include "mcactrl/core/tensor.hpp"
#include "mcactrl/core/vocab.hpp"

namespace mcactrl {

struct DenoiserConfig {
    int image_size = 32;
    int image_channels = 3;
    int base_channels = 16;  // 32x32 stage
    int mid_channels = 48;   // 16x16 stage
    int low_channels = 64;   // 8x8 stage
    int lift_channels = 16;  // decoder width carried back to full resolution
    int heads = 2;
    int head_dim = 16;
    int context_dim = 32;
    int time_dim = 64;
    int groups = 8;
    uint64_t init_seed = 0;

    /// Single-line `key=value` rendering used as the weights-file header.
    std::string header() const;
    static DenoiserConfig parse_header(const std::string& line);
};

/// One self-attention layer of the denoiser, in forward execution order.
struct AttentionLayerInfo {
    int index = 0;
    int height = 0;
    int width = 0;
    int heads = 0;
    int head_dim = 0;
    bool decoder = false;

    int tokens() const { return height * width; }
};

/// Query/key/value of one batch item at one self-attention layer,
/// each laid out [heads, tokens, head_dim].
struct AttentionTriplet {
    Tensor q;
    Tensor k;
    Tensor v;
    int layer = 0;
    int height = 0;
    int width = 0;

    int heads() const { return q.dim(0); }
    int tokens() const { return q.dim(1); }
    int head_dim() const { return q.dim(2); }
};

/// Called at every self-attention layer with every batch item's triplet.
/// `outputs` holds the default attention outputs ([heads, tokens, d] each) and
/// may be overwritten in place; replacements must keep their shapes.
using AttentionHook =
    std::function<void(int layer, std::span<const AttentionTriplet> batch, std::vector<Tensor>& outputs)>;

/// Everything recorded during a tapped forward pass.
struct ForwardTaps {
    /// [layer][batch item]
    std::vector<std::vector<AttentionTriplet>> self_attention;
    /// Per layer, cross-attention probabilities [batch, heads, tokens, context_len].
    std::vector<Tensor> cross_attention;
};

/// Anything that predicts noise for a batch of images. The toy denoiser is the
/// production implementation; tests substitute closed-form predictors.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;

    /// x is [B, C, H, W]; returns a noise prediction of the same shape.
    virtual Tensor predict(const Tensor& x, std::span<const int> timesteps, const std::vector<TokenSeq>& tokens,
                           const AttentionHook* hook = nullptr, ForwardTaps* taps = nullptr) const = 0;

    /// Self-attention layers a hook will be invoked on, in execution order.
    virtual const std::vector<AttentionLayerInfo>& attention_layers() const = 0;
};

/// Small pixel-space U-Net noise predictor: two downsampling stages, eight
/// self-attention layers (four encoder, four decoder) each followed by
/// cross-attention onto the caption tokens.
class ToyDenoiser final : public NoisePredictor {
public:
    explicit ToyDenoiser(DenoiserConfig config = {});
    ~ToyDenoiser();
    ToyDenoiser(ToyDenoiser&&) noexcept;
    ToyDenoiser& operator=(ToyDenoiser&&) noexcept;
    ToyDenoiser(const ToyDenoiser&) = delete;
    ToyDenoiser& operator=(const ToyDenoiser&) = delete;

    /// Deep copy with independent parameter storage.
    ToyDenoiser clone() const;

    const DenoiserConfig& config() const { return config_; }
    const std::vector<AttentionLayerInfo>& attention_layers() const override { return layers_; }
    int num_attention_layers() const { return static_cast<int>(layers_.size()); }
    int decoder_start() const;
    /// Distinct (height, width) pairs of the self-attention layers.
    std::vector<std::pair<int, int>> attention_resolutions() const;

    /// Differentiable forward pass; x is [B, C, H, W] in model units.
    Var forward(const Var& x, std::span<const int> timesteps, const std::vector<TokenSeq>& tokens) const;

    /// Inference forward pass with optional attention override and taps.
    Tensor predict(const Tensor& x, std::span<const int> timesteps, const std::vector<TokenSeq>& tokens,
                   const AttentionHook* hook = nullptr, ForwardTaps* taps = nullptr) const override;

    const std::vector<std::pair<std::string, Var>>& parameters() const { return params_; }
    int64_t parameter_count() const;
    std::vector<float> flat_weights() const;
    void set_flat_weights(std::span<const float> weights);

private:
    struct Impl;
    Var run(const Var& x, std::span<const int> timesteps, const std::vector<TokenSeq>& tokens,
            const AttentionHook* hook, ForwardTaps* taps) const;

    DenoiserConfig config_;
    std::vector<AttentionLayerInfo> layers_;
    std::vector<std::pair<std::string, Var>> params_;
    std::unique_ptr<Impl> impl_;
};

}  // namespace mcactrl
