#pragma once

#include <cstdint>
#include <span>

#include "mcactrl/core/denoiser.hpp"
#include "mcactrl/mask/mask.hpp"

namespace mcactrl {

/// Additive logit used for masked-out keys.
inline constexpr float kMaskFill = -1e9f;

/// Placement of the two fused features. SubjectInside puts subject-derived
/// features where M_C = 1; PrintedOrder swaps them (kept for A/B comparison).
enum class FusionOrder { SubjectInside, PrintedOrder };

/// QK^T / sqrt(d) for head-major [heads, tokens, d] operands -> [heads, nq, nk].
Tensor attention_logits(const Tensor& q, const Tensor& k);

/// Softmax attention where every key position whose mask bit equals
/// `fill_value` receives an additive -1e9. Query rows with no allowed key fall
/// back to unmasked attention. `key_mask` has one entry per key token.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const uint8_t> key_mask,
                        uint8_t fill_value);

/// Local query: target queries read subject keys/values inside M_S and
/// condition keys/values outside M_C; the two results are blended per query
/// position by M_C.
Tensor salq_fuse(const AttentionTriplet& target, const AttentionTriplet& subject, const AttentionTriplet& condition,
                 const BinaryMask& subject_mask, const BinaryMask& editable_mask,
                 FusionOrder order = FusionOrder::SubjectInside);

/// Global injection: the subject and condition branches' own masked
/// self-attention outputs, blended by M_C, replace the target output.
Tensor sagi_fuse(const AttentionTriplet& subject, const AttentionTriplet& condition, const BinaryMask& subject_mask,
                 const BinaryMask& editable_mask, FusionOrder order = FusionOrder::SubjectInside);

}  // namespace mcactrl
