#include <doctest.h>

#include "mcactrl/control/pipeline.hpp"
#include "mcactrl/errors.hpp"

using namespace mcactrl;

namespace {

DenoiserConfig small_config() {
    DenoiserConfig c;
    c.image_size = 8;
    c.base_channels = 8;
    c.mid_channels = 8;
    c.low_channels = 8;
    c.lift_channels = 8;
    c.head_dim = 4;
    c.context_dim = 8;
    c.time_dim = 8;
    c.groups = 2;
    c.init_seed = 17;
    return c;
}

struct Fixture {
    ToyDenoiser model{small_config()};
    NoiseSchedule noise = make_noise_schedule();
    SamplerConfig sampler;
    BranchBundle bundle;
    PipelineMasks masks;

    explicit Fixture(uint64_t seed = 1) {
        sampler.steps = 10;
        const Shape shape{1, 3, 8, 8};
        const auto& vocab = Vocabulary::instance();
        bundle.subject_start = gaussian_latent(shape, seed);
        bundle.condition_start = gaussian_latent(shape, seed + 100);
        bundle.target_start = bundle.condition_start;
        bundle.subject_tokens = vocab.encode("red circle on white");
        bundle.condition_tokens = vocab.encode("blue square on green");
        bundle.target_tokens = bundle.condition_tokens;
        BinaryMask ms(8, 8), mc(8, 8);
        for (int y = 2; y < 6; ++y) {
            for (int x = 2; x < 6; ++x) {
                ms.set(x, y);
                mc.set(x + 1, y);
            }
        }
        const auto res = model.attention_resolutions();
        masks.subject = build_pyramid(ms, res);
        masks.editable = build_pyramid(mc, res);
    }

    LatentState alone(const LatentState& start, const TokenSeq& tokens) const {
        return ddim_sample(model, start, {tokens}, sampler, noise).back();
    }
};

ControlSchedule steps10(int s_gi, int e_gi, int e_lq, int layer_gi = 0, int layer_lq = 8) {
    return {s_gi, e_gi, e_gi, e_lq, layer_gi, layer_lq, 10};
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("empty windows leave the target equal to the condition") {
    Fixture f;
    const PipelineResult r = run_pipeline(f.model, f.bundle, steps10(0, 0, 0), f.masks, f.sampler, f.noise);
    CHECK(max_abs_diff(r.target, r.condition) <= 1e-6);
}

TEST_CASE("subject and condition branches are never modified") {
    Fixture f;
    const PipelineResult r = run_pipeline(f.model, f.bundle, steps10(0, 4, 8), f.masks, f.sampler, f.noise);
    CHECK(max_abs_diff(r.subject, f.alone(f.bundle.subject_start, f.bundle.subject_tokens)) <= 1e-6);
    CHECK(max_abs_diff(r.condition, f.alone(f.bundle.condition_start, f.bundle.condition_tokens)) <= 1e-6);
    CHECK(max_abs_diff(r.target, r.condition) > 1e-4);
}

TEST_CASE("empty editable mask with global injection everywhere reproduces the condition") {
    Fixture f;
    f.masks.editable = build_pyramid(BinaryMask(8, 8), f.model.attention_resolutions());
    const PipelineResult r = run_pipeline(f.model, f.bundle, steps10(0, 10, 10), f.masks, f.sampler, f.noise);
    CHECK(max_abs_diff(r.target, r.condition) <= 1e-5);
}

TEST_CASE("batched and sequential runs agree") {
    for (uint64_t seed : {1, 2}) {
        Fixture f(seed);
        PipelineOptions seq;
        seq.sequential = true;
        const ControlSchedule s = steps10(0, 4, 8);
        const PipelineResult a = run_pipeline(f.model, f.bundle, s, f.masks, f.sampler, f.noise);
        const PipelineResult b = run_pipeline(f.model, f.bundle, s, f.masks, f.sampler, f.noise, seq);
        CHECK(max_abs_diff(a.target, b.target) <= 1e-5);
        CHECK(max_abs_diff(a.subject, b.subject) <= 1e-5);
    }
}

TEST_CASE("source prompts as negative keep the source branches on their guidance-1 paths") {
    Fixture f;
    f.bundle.source_prompts_as_negative = true;
    f.bundle.target_tokens = Vocabulary::instance().encode("red circle on green");
    SamplerConfig plain = f.sampler;
    plain.guidance_scale = 1.0;
    const ControlSchedule s = steps10(0, 4, 8);
    const PipelineResult r = run_pipeline(f.model, f.bundle, s, f.masks, f.sampler, f.noise);
    CHECK(max_abs_diff(r.subject, ddim_sample(f.model, f.bundle.subject_start, {f.bundle.subject_tokens}, plain,
                                              f.noise).back()) <= 1e-6);
    CHECK(max_abs_diff(r.condition, ddim_sample(f.model, f.bundle.condition_start, {f.bundle.condition_tokens}, plain,
                                                f.noise).back()) <= 1e-6);
    const PipelineResult g1 = run_pipeline(f.model, f.bundle, s, f.masks, plain, f.noise);
    CHECK(max_abs_diff(r.target, g1.target) > 1e-4);
    PipelineOptions seq;
    seq.sequential = true;
    CHECK(max_abs_diff(r.target, run_pipeline(f.model, f.bundle, s, f.masks, f.sampler, f.noise, seq).target) <= 1e-5);
    f.bundle.target_tokens = f.bundle.condition_tokens;
    const PipelineResult empty = run_pipeline(f.model, f.bundle, steps10(0, 0, 0), f.masks, f.sampler, f.noise);
    CHECK(max_abs_diff(empty.target, empty.condition) <= 1e-6);
}

TEST_CASE("fusion order changes the result") {
    Fixture f;
    PipelineOptions printed;
    printed.order = FusionOrder::PrintedOrder;
    const ControlSchedule s = steps10(0, 4, 8);
    const PipelineResult a = run_pipeline(f.model, f.bundle, s, f.masks, f.sampler, f.noise);
    const PipelineResult b = run_pipeline(f.model, f.bundle, s, f.masks, f.sampler, f.noise, printed);
    CHECK(max_abs_diff(a.target, b.target) > 1e-6);
}

TEST_CASE("configuration errors") {
    Fixture f;
    CHECK_THROWS_AS(run_pipeline(f.model, f.bundle, steps10(0, 4, 3), f.masks, f.sampler, f.noise), ConfigError);
    CHECK_THROWS_AS(run_pipeline(f.model, f.bundle, ControlSchedule{}, f.masks, f.sampler, f.noise), ConfigError);
    PipelineMasks missing = f.masks;
    missing.subject.clear();
    CHECK_THROWS_AS(run_pipeline(f.model, f.bundle, steps10(0, 4, 8), missing, f.sampler, f.noise), ConfigError);
    const ControlSchedule reversed{4, 10, 0, 4, 0, 8, 10};
    CHECK_THROWS_AS(run_pipeline(f.model, f.bundle, reversed, f.masks, f.sampler, f.noise), ConfigError);
    PipelineOptions rev;
    rev.allow_reverse = true;
    CHECK_NOTHROW(run_pipeline(f.model, f.bundle, reversed, f.masks, f.sampler, f.noise, rev));
}

TEST_CASE("text mode extracts an editable mask every step") {
    Fixture f;
    PipelineOptions opt;
    opt.text_mask = TextMaskConfig{1, 4, 0.5f, {}, {1}};
    const PipelineResult r = run_pipeline(f.model, f.bundle, steps10(0, 4, 8), f.masks, f.sampler, f.noise, opt);
    CHECK(r.editable_masks.size() == 10);
    CHECK(r.editable_masks[0].width == 8);
    opt.text_mask->token_index = 9;
    CHECK_THROWS(run_pipeline(f.model, f.bundle, steps10(0, 4, 8), f.masks, f.sampler, f.noise, opt));
}

}  // TEST_SUITE
