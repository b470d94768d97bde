#pragma once

#include <optional>
#include <vector>

#include "mcactrl/control/attention.hpp"
#include "mcactrl/control/schedule.hpp"
#include "mcactrl/core/sampler.hpp"
#include "mcactrl/mask/mask.hpp"

namespace mcactrl {

/// Starting states and prompts of the three branches. In image mode the
/// subject and condition starts come from DDIM inversion; in text mode the
/// condition start is Gaussian noise. The target starts from the condition's
/// start.
struct BranchBundle {
    LatentState subject_start;
    LatentState condition_start;
    LatentState target_start;
    TokenSeq subject_tokens;
    TokenSeq condition_tokens;
    TokenSeq target_tokens;
    /// Guide against the source prompts instead of the empty prompt: subject
    /// and condition use their own prompt, the target the condition's. The
    /// source branches then follow their inversion trajectories at any scale.
    bool source_prompts_as_negative = false;
};

struct PipelineMasks {
    MaskPyramid subject;
    /// Ignored when the editable mask is re-extracted every step.
    MaskPyramid editable;
};

/// Re-derive the editable mask each step from the condition branch's
/// cross-attention to one prompt token.
struct TextMaskConfig {
    int token_index = 0;
    int prompt_length = 1;
    float threshold = 0.5f;
    /// Model layers to average; empty means every decoder layer.
    std::vector<int> layers;
    DilationKernel dilation{};
};

struct PipelineOptions {
    FusionOrder order = FusionOrder::SubjectInside;
    /// Accept a SALQ-first schedule (ablation).
    bool allow_reverse = false;
    /// Run three coordinated single-image passes instead of one batch of three.
    bool sequential = false;
    std::optional<TextMaskConfig> text_mask;
};

struct PipelineResult {
    LatentState subject;
    LatentState condition;
    LatentState target;
    /// Editable mask used at each step (text mode only).
    std::vector<BinaryMask> editable_masks;
};

/// Runs subject, condition and target in lockstep. At every self-attention
/// layer of the target the schedule picks global injection, local query or
/// the target's own attention; the other two branches are never modified.
PipelineResult run_pipeline(const NoisePredictor& model, const BranchBundle& bundle, const ControlSchedule& schedule,
                            const PipelineMasks& masks, const SamplerConfig& sampler, const NoiseSchedule& noise,
                            const PipelineOptions& options = {});

/// Editable mask from the cross-attention recorded in one conditional pass.
BinaryMask editable_mask_from_attention(const NoisePredictor& model, const ForwardTaps& taps,
                                        const TextMaskConfig& config, int out_h, int out_w);

}  // namespace mcactrl
