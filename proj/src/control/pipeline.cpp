#include "mcactrl/control/pipeline.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

#include "mcactrl/errors.hpp"

namespace mcactrl {

namespace {

enum Branch { kSubject = 0, kCondition = 1, kTarget = 2 };

LatentState stack(const std::vector<const LatentState*>& items) {
    Shape s = items.front()->shape;
    s[0] = static_cast<int>(items.size());
    std::vector<double> values;
    values.reserve(items.front()->values.size() * items.size());
    for (const auto* z : items) {
        if (z->shape != items.front()->shape) throw std::invalid_argument("branch states differ in shape");
        values.insert(values.end(), z->values.begin(), z->values.end());
    }
    return LatentState(s, std::move(values), items.front()->step);
}

LatentState unstack(const LatentState& z, int index) {
    Shape s = z.shape;
    const size_t n = z.values.size() / static_cast<size_t>(s[0]);
    s[0] = 1;
    return LatentState(s, std::vector<double>(z.values.begin() + index * n, z.values.begin() + (index + 1) * n),
                       z.step);
}

const BinaryMask& level(const MaskPyramid& p, const AttentionLayerInfo& info, const char* which) {
    const auto it = p.find({info.height, info.width});
    if (it == p.end()) {
        throw ConfigError(std::string(which) + " mask pyramid has no " + std::to_string(info.height) + "x" +
                          std::to_string(info.width) + " level for layer " + std::to_string(info.index));
    }
    return it->second;
}

struct Controller {
    const NoisePredictor& model;
    const ControlSchedule& schedule;
    const MaskPyramid& subject;
    const MaskPyramid* editable;
    FusionOrder order;

    // Replacement for the target's output at one layer, or nullopt to keep it.
    std::optional<Tensor> apply(int step, int layer, const AttentionTriplet& sub, const AttentionTriplet& con,
                                const AttentionTriplet& tgt) const {
        const auto& layers = model.attention_layers();
        const EditDecision d = edit_dispatch(step, schedule_layer(layer, static_cast<int>(layers.size())), schedule);
        if (d == EditDecision::Standard) return std::nullopt;
        const auto& info = layers[static_cast<size_t>(layer)];
        const BinaryMask& ms = level(subject, info, "subject");
        const BinaryMask& mc = level(*editable, info, "editable");
        if (d == EditDecision::GlobalInject) return sagi_fuse(sub, con, ms, mc, order);
        return salq_fuse(tgt, sub, con, ms, mc, order);
    }
};

}  // namespace

BinaryMask editable_mask_from_attention(const NoisePredictor& model, const ForwardTaps& taps,
                                        const TextMaskConfig& config, int out_h, int out_w) {
    std::vector<CrossAttentionMap> maps;
    for (const auto& info : model.attention_layers()) {
        const bool chosen = config.layers.empty()
                                ? info.decoder
                                : std::find(config.layers.begin(), config.layers.end(), info.index) != config.layers.end();
        if (!chosen) continue;
        if (static_cast<size_t>(info.index) >= taps.cross_attention.size() ||
            taps.cross_attention[static_cast<size_t>(info.index)].empty()) {
            throw ConfigError("no cross-attention recorded for layer " + std::to_string(info.index));
        }
        maps.push_back({taps.cross_attention[static_cast<size_t>(info.index)], info.height, info.width});
    }
    if (maps.empty()) throw ConfigError("text mask extraction selected no layers");
    const BinaryMask raw =
        extract_cross_attention_mask(maps, 0, config.token_index, config.prompt_length, out_h, out_w, config.threshold);
    return dilate(raw, config.dilation);
}

PipelineResult run_pipeline(const NoisePredictor& model, const BranchBundle& bundle, const ControlSchedule& schedule,
                            const PipelineMasks& masks, const SamplerConfig& sampler, const NoiseSchedule& noise,
                            const PipelineOptions& options) {
    const auto violations = validate_schedule(schedule, {options.allow_reverse});
    if (!violations.empty()) {
        std::string msg = "invalid control schedule:";
        for (const auto& v : violations) msg += " [" + v + "]";
        throw ConfigError(msg);
    }
    if (schedule.total_steps != sampler.steps) {
        throw ConfigError("schedule covers " + std::to_string(schedule.total_steps) + " steps but the sampler runs " +
                          std::to_string(sampler.steps));
    }
    sampler.validate(noise);
    const auto& layers = model.attention_layers();
    for (const auto& info : layers) {
        level(masks.subject, info, "subject");
        if (!options.text_mask) level(masks.editable, info, "editable");
    }
    const Shape shape = bundle.condition_start.shape;
    if (bundle.subject_start.shape != shape || bundle.target_start.shape != shape || shape.size() != 4 ||
        shape[0] != 1) {
        throw std::invalid_argument("branch states must share one [1,C,H,W] shape");
    }

    const std::vector<int> ts = ddim_timesteps(sampler.steps, noise.total_steps);
    const std::vector<TokenSeq> tokens{bundle.subject_tokens, bundle.condition_tokens, bundle.target_tokens};
    const std::vector<TokenSeq> negative{bundle.subject_tokens, bundle.condition_tokens, bundle.condition_tokens};
    auto negative_for = [&](int b) -> std::vector<TokenSeq> { return {negative[static_cast<size_t>(b)]}; };
    const bool use_negative = bundle.source_prompts_as_negative;
    PipelineResult result;
    LatentState z[3] = {bundle.subject_start, bundle.condition_start, bundle.target_start};
    MaskPyramid editable = masks.editable;
    Controller ctl{model, schedule, masks.subject, &editable, options.order};

    for (size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
        const int step = static_cast<int>(i);
        try {
            if (options.text_mask) {
                ForwardTaps taps;
                const Tensor x = z[kCondition].to_tensor();
                const int ti[1] = {t};
                model.predict(x, ti, {bundle.condition_tokens}, nullptr, &taps);
                BinaryMask mc = editable_mask_from_attention(model, taps, *options.text_mask, shape[2], shape[3]);
                std::vector<std::pair<int, int>> res;
                for (const auto& info : layers) res.push_back({info.height, info.width});
                editable = build_pyramid(mc, res);
                result.editable_masks.push_back(std::move(mc));
            }
            LatentState eps[3];
            if (!options.sequential) {
                const SamplerHook hook = [&](int s, GuidancePass, int layer, std::span<const AttentionTriplet> batch,
                                             std::vector<Tensor>& outputs) {
                    if (batch.size() != 3) throw ContractViolation("pipeline pass expects a batch of three");
                    if (auto r = ctl.apply(s, layer, batch[kSubject], batch[kCondition], batch[kTarget])) {
                        outputs[kTarget] = std::move(*r);
                    }
                };
                const LatentState joint = stack({&z[0], &z[1], &z[2]});
                const LatentState e = cfg_predict(model, joint, t, tokens, sampler.guidance_scale, &hook, step,
                                                    use_negative ? &negative : nullptr);
                for (int b = 0; b < 3; ++b) eps[b] = unstack(e, b);
            } else {
                // Source branches record their triplets; the target then reads them.
                std::map<std::pair<int, int>, AttentionTriplet> recorded[2];
                for (int b : {kSubject, kCondition}) {
                    const SamplerHook tap = [&, b](int, GuidancePass pass, int layer,
                                                   std::span<const AttentionTriplet> batch, std::vector<Tensor>&) {
                        recorded[b][{static_cast<int>(pass), layer}] = batch[0];
                    };
                    const auto neg = negative_for(b);
                    eps[b] = cfg_predict(model, z[b], t, {tokens[static_cast<size_t>(b)]}, sampler.guidance_scale,
                                         &tap, step, use_negative ? &neg : nullptr);
                }
                const SamplerHook hook = [&](int s, GuidancePass pass, int layer,
                                             std::span<const AttentionTriplet> batch, std::vector<Tensor>& outputs) {
                    // A source whose negative prompt equals its prompt ran one pass, standing for both.
                    auto source = [&](int b) -> const AttentionTriplet& {
                        const auto it = recorded[b].find({static_cast<int>(pass), layer});
                        return it != recorded[b].end()
                                   ? it->second
                                   : recorded[b].at({static_cast<int>(GuidancePass::Conditional), layer});
                    };
                    if (auto r = ctl.apply(s, layer, source(kSubject), source(kCondition), batch[0])) {
                        outputs[0] = std::move(*r);
                    }
                };
                const auto neg = negative_for(kTarget);
                eps[kTarget] = cfg_predict(model, z[kTarget], t, {tokens[kTarget]}, sampler.guidance_scale, &hook,
                                           step, use_negative ? &neg : nullptr);
            }
            for (int b = 0; b < 3; ++b) z[b] = ddim_step(z[b], eps[b], t, t_prev, noise);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw std::runtime_error("pipeline step " + std::to_string(step) + " (t=" + std::to_string(t) +
                                     "): " + e.what());
        }
    }
    result.subject = z[kSubject];
    result.condition = z[kCondition];
    result.target = z[kTarget];
    return result;
}

}  // namespace mcactrl
