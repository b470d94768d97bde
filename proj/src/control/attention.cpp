#include "mcactrl/control/attention.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mcactrl {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapR = Eigen::Map<const MatR>;
using MapR = Eigen::Map<MatR>;

void require_rank3(const Tensor& t, const char* name) {
    if (t.rank() != 3) throw std::invalid_argument(std::string(name) + " must be [heads, tokens, d], got " + shape_str(t.shape));
}

void check_qk(const Tensor& q, const Tensor& k) {
    require_rank3(q, "Q");
    require_rank3(k, "K");
    if (q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2)) {
        throw std::invalid_argument("Q " + shape_str(q.shape) + " and K " + shape_str(k.shape) + " disagree on heads or d");
    }
    if (q.dim(2) <= 0) throw std::invalid_argument("attention head dim must be positive");
}

}  // namespace

Tensor attention_logits(const Tensor& q, const Tensor& k) {
    check_qk(q, k);
    const int heads = q.dim(0), nq = q.dim(1), nk = k.dim(1), d = q.dim(2);
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    Tensor out({heads, nq, nk});
    for (int h = 0; h < heads; ++h) {
        CMapR qm(q.ptr() + static_cast<int64_t>(h) * nq * d, nq, d);
        CMapR km(k.ptr() + static_cast<int64_t>(h) * nk * d, nk, d);
        MapR(out.ptr() + static_cast<int64_t>(h) * nq * nk, nq, nk).noalias() = (qm * km.transpose()) * scale;
    }
    return out;
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const uint8_t> key_mask,
                        uint8_t fill_value) {
    check_qk(q, k);
    require_rank3(v, "V");
    if (v.dim(0) != k.dim(0) || v.dim(1) != k.dim(1)) {
        throw std::invalid_argument("V " + shape_str(v.shape) + " does not match K " + shape_str(k.shape));
    }
    const int nk = k.dim(1);
    if (static_cast<int>(key_mask.size()) != nk) {
        throw std::invalid_argument("mask has " + std::to_string(key_mask.size()) + " entries for " +
                                    std::to_string(nk) + " keys");
    }
    bool any_allowed = false;
    for (uint8_t m : key_mask) any_allowed = any_allowed || m != fill_value;
    // With no allowed key the rows revert to plain attention.
    if (!any_allowed) return scaled_dot_attention(q, k, v);
    std::vector<float> bias(static_cast<size_t>(nk));
    for (int j = 0; j < nk; ++j) bias[static_cast<size_t>(j)] = key_mask[static_cast<size_t>(j)] == fill_value ? kMaskFill : 0.0f;
    return scaled_dot_attention(q, k, v, nullptr, bias);
}

namespace {

void check_mask(const BinaryMask& m, const AttentionTriplet& t, const char* name) {
    if (m.height != t.height || m.width != t.width) {
        throw std::invalid_argument(std::string(name) + " is " + std::to_string(m.height) + "x" +
                                    std::to_string(m.width) + " but layer " + std::to_string(t.layer) + " runs at " +
                                    std::to_string(t.height) + "x" + std::to_string(t.width));
    }
    if (t.height * t.width != t.tokens()) throw std::invalid_argument("triplet token count does not match its resolution");
}

void check_same_layout(const AttentionTriplet& a, const AttentionTriplet& b) {
    if (a.height != b.height || a.width != b.width || a.q.shape != b.q.shape || a.k.shape != b.k.shape ||
        a.v.shape != b.v.shape) {
        throw std::invalid_argument("attention triplets at layers " + std::to_string(a.layer) + " and " +
                                    std::to_string(b.layer) + " differ in resolution or shape");
    }
}

// Per query position: inside (M_C = 1) takes `inside`, the rest takes `outside`.
Tensor blend(const Tensor& subject_feat, const Tensor& condition_feat, const BinaryMask& editable, FusionOrder order) {
    const Tensor& inside = order == FusionOrder::SubjectInside ? subject_feat : condition_feat;
    const Tensor& outside = order == FusionOrder::SubjectInside ? condition_feat : subject_feat;
    Tensor out = outside;
    const int heads = out.dim(0), n = out.dim(1), d = out.dim(2);
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < n; ++i) {
            if (!editable.bits[static_cast<size_t>(i)]) continue;
            const int64_t off = (static_cast<int64_t>(h) * n + i) * d;
            std::copy_n(inside.ptr() + off, d, out.ptr() + off);
        }
    }
    return out;
}

}  // namespace

Tensor salq_fuse(const AttentionTriplet& target, const AttentionTriplet& subject, const AttentionTriplet& condition,
                 const BinaryMask& subject_mask, const BinaryMask& editable_mask, FusionOrder order) {
    check_same_layout(target, subject);
    check_same_layout(target, condition);
    check_mask(subject_mask, subject, "subject mask");
    check_mask(editable_mask, condition, "editable mask");
    const Tensor fg = masked_attention(target.q, subject.k, subject.v, subject_mask.bits, 0);
    const Tensor bg = masked_attention(target.q, condition.k, condition.v, editable_mask.bits, 1);
    return blend(fg, bg, editable_mask, order);
}

Tensor sagi_fuse(const AttentionTriplet& subject, const AttentionTriplet& condition, const BinaryMask& subject_mask,
                 const BinaryMask& editable_mask, FusionOrder order) {
    check_same_layout(subject, condition);
    check_mask(subject_mask, subject, "subject mask");
    check_mask(editable_mask, condition, "editable mask");
    const Tensor fs = masked_attention(subject.q, subject.k, subject.v, subject_mask.bits, 0);
    const Tensor fc = masked_attention(condition.q, condition.k, condition.v, editable_mask.bits, 1);
    return blend(fs, fc, editable_mask, order);
}

}  // namespace mcactrl
