// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Thresholds live in acceptance_thresholds.hpp.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "acceptance_thresholds.hpp"
#include "mcactrl/app/benchmark.hpp"
#include "mcactrl/app/metrics.hpp"
#include "mcactrl/core/io.hpp"
#include "mcactrl/core/training.hpp"
#include "reference.hpp"

using namespace mcactrl;
namespace fs = std::filesystem;
namespace limits = mcactrl::acceptance;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const Outcome& o) {
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

Outcome masked_attention_oracle() {
    const auto t0 = Clock::now();
    std::mt19937 rng(2024);
    std::uniform_int_distribution<int> heads(1, 3), tokens(1, 24), dim(1, 8);
    float worst = 0.0f;
    for (int i = 0; i < limits::kOracleInstances; ++i) {
        const int h = heads(rng), nq = tokens(rng), nk = tokens(rng), d = dim(rng), dv = dim(rng);
        const Tensor q = testing::random_tensor({h, nq, d}, rng, 2.0f);
        const Tensor k = testing::random_tensor({h, nk, d}, rng, 2.0f);
        const Tensor v = testing::random_tensor({h, nk, dv}, rng);
        std::vector<uint8_t> mask(static_cast<size_t>(nk));
        const int density = static_cast<int>(rng() % 5);  // includes all-masked and none-masked rows
        for (auto& m : mask) m = static_cast<int>(rng() % 4) < density ? 1 : 0;
        const uint8_t fill = rng() % 2;
        const Tensor got = masked_attention(q, k, v, mask, fill);
        worst = std::max(worst, max_abs_diff(got, testing::reference_masked_attention(q, k, v, mask, fill)));
    }
    const double secs = seconds_since(t0);
    return {worst <= limits::kOracleMaxDiff && secs < limits::kOracleSeconds,
            fmt("%d instances, max |diff| %.3g, %.2f s", limits::kOracleInstances, worst, secs)};
}

// Membership in explicit step/layer sets, built without the dispatch code.
EditDecision enumerated_decision(int t, int l, const ControlSchedule& s) {
    std::set<std::pair<int, int>> inject, local;
    for (int step = s.s_gi; step < s.e_gi; ++step) {
        for (int layer = s.layer_gi; layer < kScheduleLayers; ++layer) inject.insert({step, layer});
    }
    for (int step = s.s_lq; step < s.e_lq; ++step) {
        for (int layer = s.layer_lq; layer < kScheduleLayers; ++layer) local.insert({step, layer});
    }
    if (inject.count({t, l})) return EditDecision::GlobalInject;
    if (local.count({t, l})) return EditDecision::LocalQuery;
    return EditDecision::Standard;
}

Outcome dispatch_truth_table() {
    std::vector<ControlSchedule> schedules{*schedule_preset("swap-uniform"), *schedule_preset("gen-uniform")};
    std::mt19937 rng(7);
    while (schedules.size() < 22) {
        ControlSchedule s;
        s.s_gi = static_cast<int>(rng() % 51);
        s.e_gi = s.s_gi + static_cast<int>(rng() % (51 - s.s_gi));
        s.s_lq = s.e_gi;
        s.e_lq = s.s_lq + static_cast<int>(rng() % (51 - s.s_lq));
        s.layer_gi = static_cast<int>(rng() % 17);
        s.layer_lq = static_cast<int>(rng() % 17);
        if (validate_schedule(s).empty()) schedules.push_back(s);
    }
    int mismatches = 0, cells = 0;
    for (const auto& s : schedules) {
        for (int t = 0; t < 50; ++t) {
            for (int l = 0; l < kScheduleLayers; ++l) {
                ++cells;
                if (edit_dispatch(t, l, s) != enumerated_decision(t, l, s)) ++mismatches;
            }
        }
    }
    return {mismatches == 0, fmt("%zu schedules, %d cells, %d mismatches", schedules.size(), cells, mismatches)};
}

BinaryMask random_blob_mask(std::mt19937& rng, int w, int h) {
    BinaryMask m(w, h);
    const double p = std::uniform_real_distribution<double>(0.0, 0.3)(rng);
    std::bernoulli_distribution coin(p);
    for (auto& b : m.bits) b = coin(rng) ? 1 : 0;
    return m;
}

// Independent dilation: a pixel is set if any pixel within Chebyshev distance r is set.
BinaryMask chebyshev_dilate(const BinaryMask& m, int r) {
    BinaryMask out(m.width, m.height);
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            for (int dy = -r; dy <= r && !out.at(x, y); ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = x + dx, yy = y + dy;
                    if (xx >= 0 && yy >= 0 && xx < m.width && yy < m.height && m.at(xx, yy)) {
                        out.set(x, y);
                        break;
                    }
                }
            }
        }
    }
    return out;
}

Outcome mask_properties() {
    std::mt19937 rng(99);
    int violations = 0;
    const std::vector<std::pair<int, int>> levels{{32, 32}, {16, 16}, {8, 8}, {5, 7}};
    for (int i = 0; i < limits::kMaskSamples; ++i) {
        const BinaryMask a = random_blob_mask(rng, 32, 32), b = random_blob_mask(rng, 32, 32);
        const int r = 1 + i % 3;
        const BinaryMask da = dilate(a, {r});
        if (!mask_contains(da, a)) ++violations;
        if (da != chebyshev_dilate(a, r)) ++violations;
        if (dilate(mask_union(a, b), {r}) != mask_union(da, dilate(b, {r}))) ++violations;
        if (!mask_contains(dilate(mask_union(a, b), {r}), da)) ++violations;
        const MaskPyramid p = build_pyramid(a, levels);
        for (const auto& [hw, low] : p) {
            const auto [lh, lw] = hw;
            for (int y = 0; y < 32; ++y) {
                for (int x = 0; x < 32; ++x) {
                    // Soundness: every set pixel lands in a set cell.
                    if (a.at(x, y) && !low.at(x * lw / 32, y * lh / 32)) ++violations;
                }
            }
            for (int cy = 0; cy < lh; ++cy) {
                for (int cx = 0; cx < lw; ++cx) {
                    // Tightness: a set cell covers at least one set pixel.
                    if (!low.at(cx, cy)) continue;
                    bool any = false;
                    for (int y = cy * 32 / lh; y < ((cy + 1) * 32 + lh - 1) / lh; ++y) {
                        for (int x = cx * 32 / lw; x < ((cx + 1) * 32 + lw - 1) / lw; ++x) any = any || a.at(x, y);
                    }
                    if (!any) ++violations;
                }
            }
        }
    }
    return {violations == 0, fmt("%d random masks, %d violations", limits::kMaskSamples, violations)};
}

struct Context {
    fs::path work;
    NoiseSchedule noise = make_noise_schedule();
    std::optional<ToyDenoiser> model;
    fs::path manifest;
    std::vector<ManifestEntry> clean_swaps;
};

Outcome training_smoke(Context& ctx) {
    const auto t0 = Clock::now();
    const auto data = make_training_dataset(limits::kTrainScenes, 0);
    TrainingConfig cfg;
    cfg.steps = limits::kTrainSteps;
    cfg.batch_size = limits::kTrainBatch;
    TrainingResult r = train_toy_denoiser(data, cfg, ctx.noise);
    const double secs = seconds_since(t0);
    {
        std::ofstream log(ctx.work / "loss.csv");
        log << "step,loss\n";
        for (size_t i = 0; i < r.losses.size(); ++i) log << i << ',' << r.losses[i] << '\n';
    }
    save_weights(ctx.work / "weights.bin", r.model);
    const auto smooth = smooth_losses(r.losses, limits::kLossWindow);
    const double initial = smooth[static_cast<size_t>(limits::kLossWindow - 1)], final_loss = smooth.back();
    ctx.model.emplace(std::move(r.model));
    return {final_loss < limits::kLossRatio * initial && secs < limits::kTrainSeconds,
            fmt("%d steps on %d scenes, smoothed loss %.4f -> %.4f (ratio %.3f), %.0f s", limits::kTrainSteps,
                limits::kTrainScenes, initial, final_loss, final_loss / initial, secs)};
}

void build_benchmark(Context& ctx) {
    BenchmarkConfig bc;
    bc.subjects = limits::kBenchSubjects;
    bc.conditions_per_subject = limits::kBenchConditions;
    bc.prompts_per_subject = 1;
    write_benchmark(ctx.work / "bench", make_benchmark(bc));
    ctx.manifest = ctx.work / "bench" / "manifest.tsv";
    for (const auto& e : read_manifest(ctx.manifest)) {
        if (e.task == TaskKind::Swapping && e.variant == SceneVariant::Clean) ctx.clean_swaps.push_back(e);
    }
}

PreparedTask prepare_entry(const Context& ctx, const ManifestEntry& e, const SamplerConfig& sampler) {
    return prepare_task(request_for_entry(e, ctx.manifest.parent_path(), sampler), *ctx.model, ctx.noise);
}

PipelineMasks masks_for(const Context& ctx, const PreparedTask& prep, const BinaryMask& editable) {
    const auto res = ctx.model->attention_resolutions();
    return {build_pyramid(prep.subject_mask, res), build_pyramid(editable, res)};
}

Outcome degenerate_schedule(const Context& ctx) {
    const auto t0 = Clock::now();
    const SamplerConfig sampler;
    const PreparedTask prep = prepare_entry(ctx, ctx.clean_swaps.front(), sampler);
    const ControlSchedule empty{0, 0, 0, 0, 0, 8, sampler.steps};
    const PipelineResult r =
        run_pipeline(*ctx.model, prep.bundle, empty, masks_for(ctx, prep, prep.editable), sampler, ctx.noise);
    const double diff = max_abs_diff(r.target, r.condition);
    const double secs = seconds_since(t0);
    return {diff <= limits::kDegenerateMaxDiff && secs < limits::kDegenerateSeconds,
            fmt("empty windows, max |target - condition| %.3g, %.1f s", diff, secs)};
}

Outcome full_background_injection(const Context& ctx) {
    const SamplerConfig sampler;
    const PreparedTask prep = prepare_entry(ctx, ctx.clean_swaps.front(), sampler);
    const ControlSchedule all{0, sampler.steps, sampler.steps, sampler.steps, 0, 0, sampler.steps};
    const BinaryMask none(prep.subject.width, prep.subject.height);
    const PipelineResult r = run_pipeline(*ctx.model, prep.bundle, all, masks_for(ctx, prep, none), sampler, ctx.noise);
    const double diff = max_abs_diff(r.target, r.condition);
    return {diff <= limits::kFullInjectMaxDiff, fmt("empty editable mask, global injection everywhere, max |diff| %.3g", diff)};
}

Outcome batch_packing(const Context& ctx) {
    const SamplerConfig sampler;
    const PreparedTask prep = prepare_entry(ctx, ctx.clean_swaps.front(), sampler);
    const PipelineMasks masks = masks_for(ctx, prep, prep.editable);
    const ControlSchedule s = *schedule_preset("swap-uniform");
    double worst = 0.0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        BranchBundle b = prep.bundle;
        b.subject_start = gaussian_latent(b.subject_start.shape, 1000 + seed);
        b.condition_start = gaussian_latent(b.condition_start.shape, 2000 + seed);
        b.target_start = b.condition_start;
        PipelineOptions seq;
        seq.sequential = true;
        const PipelineResult joint = run_pipeline(*ctx.model, b, s, masks, sampler, ctx.noise);
        const PipelineResult single = run_pipeline(*ctx.model, b, s, masks, sampler, ctx.noise, seq);
        worst = std::max({worst, max_abs_diff(joint.target, single.target), max_abs_diff(joint.subject, single.subject),
                          max_abs_diff(joint.condition, single.condition)});
    }
    return {worst <= limits::kPackingMaxDiff, fmt("5 seeds, max |batched - sequential| %.3g", worst)};
}

Outcome ddim_round_trip(const Context& ctx) {
    const auto t0 = Clock::now();
    SamplerConfig sampler;
    sampler.guidance_scale = 1.0;
    sampler.inversion_guidance = 1.0;
    const fs::path dir = ctx.manifest.parent_path();
    double total = 0.0, worst = 0.0;
    int n = 0;
    for (const auto& e : ctx.clean_swaps) {
        if (n >= limits::kRoundTripImages) break;
        const RgbImage img = load_png(dir / e.condition_image);
        const TokenSeq tokens = Vocabulary::instance().encode(e.prompt);
        const auto inv = ddim_invert(*ctx.model, image_to_latent(img), {tokens}, sampler, ctx.noise);
        const RgbImage rec = latent_to_image(ddim_sample(*ctx.model, inv.front(), {tokens}, sampler, ctx.noise).back());
        const double mae = mean_abs_error(img, rec);
        total += mae;
        worst = std::max(worst, mae);
        ++n;
    }
    const double mean = total / n, secs = seconds_since(t0);
    return {mean < limits::kRoundTripMae && secs < limits::kRoundTripSeconds,
            fmt("%d images, mean abs error %.4f (worst %.4f), %.1f s", n, mean, worst, secs)};
}

Outcome swap_benchmark(const Context& ctx) {
    const auto t0 = Clock::now();
    const SamplerConfig sampler;
    const ControlSchedule s = *schedule_preset("swap-uniform");
    std::ofstream csv(ctx.work / "swap_benchmark.csv");
    csv << "case_id,bg_mse,bg_mse_baseline,fg_hist_dist,fg_hist_dist_orig\n";
    int bg_wins = 0, fg_wins = 0, n = 0;
    for (const auto& e : ctx.clean_swaps) {
        const PreparedTask prep = prepare_entry(ctx, e, sampler);
        const TaskOutput ours = run_prepared(prep, *ctx.model, s, sampler, ctx.noise);
        RunOverrides full;
        full.full_editable = true;
        const TaskOutput base = run_prepared(prep, *ctx.model, s, sampler, ctx.noise, FusionOrder::SubjectInside, false, full);
        bg_wins += ours.metrics.bg_mse < base.metrics.bg_mse;
        fg_wins += ours.metrics.fg_hist_dist < ours.metrics.fg_hist_dist_orig;
        ++n;
        csv << e.id << ',' << ours.metrics.bg_mse << ',' << base.metrics.bg_mse << ',' << ours.metrics.fg_hist_dist
            << ',' << ours.metrics.fg_hist_dist_orig << '\n';
        const fs::path out = ctx.work / "swap_results" / e.id;
        fs::create_directories(out);
        save_png(out / "target.png", ours.target);
        save_png(out / "baseline.png", base.target);
    }
    const double bg_rate = static_cast<double>(bg_wins) / n, fg_rate = static_cast<double>(fg_wins) / n;
    const double secs = seconds_since(t0);
    return {n >= limits::kSwapMinCases && bg_rate >= limits::kSwapBgWinRate && fg_rate >= limits::kSwapFgWinRate &&
                secs < limits::kSwapSeconds,
            fmt("%d clean cases, background beats full regeneration %d/%d (%.0f%%), subject closer than original "
                "%d/%d (%.0f%%), %.0f s",
                n, bg_wins, n, 100 * bg_rate, fg_wins, n, 100 * fg_rate, secs)};
}

Outcome injection_sweep(const Context& ctx) {
    SweepGrid grid;
    grid.e_gi = {0, 5, 10, 15, 20, 25, 30, 35};
    SweepOptions opts;
    opts.variant = "clean";
    const SweepResult r = run_sweep(ctx.manifest, *ctx.model, ctx.noise, grid, opts);
    {
        std::ofstream csv(ctx.work / "sweep.csv");
        write_sweep_csv(csv, r);
    }
    std::map<std::string, double> at0, at20;
    int ok_rows = 0;
    for (const auto& row : r.rows) {
        if (row.status != "ok") continue;
        ++ok_rows;
        if (row.point.schedule.e_gi == 0) at0[row.case_id] = row.metrics.fg_hist_dist;
        if (row.point.schedule.e_gi == 20) at20[row.case_id] = row.metrics.fg_hist_dist;
    }
    const int expected_rows = static_cast<int>(grid.e_gi.size() * ctx.clean_swaps.size());
    int wins = 0, strict = 0, n = 0;
    for (const auto& [id, v20] : at20) {
        if (!at0.count(id)) continue;
        ++n;
        wins += v20 <= at0[id];
        strict += v20 < at0[id];
    }
    const double rate = n ? static_cast<double>(wins) / n : 0.0;
    return {static_cast<int>(r.rows.size()) == expected_rows && ok_rows == expected_rows && rate >= limits::kSweepWinRate,
            fmt("%zu grid rows (%d ok), E_GI=20 at least as close as E_GI=0 on %d/%d cases (%.0f%%), strictly closer "
                "on %d",
                r.rows.size(), ok_rows, wins, n, 100 * rate, strict)};
}

void guarded(const std::string& name, const std::function<Outcome()>& fn) {
    try {
        report(name, fn());
    } catch (const std::exception& e) {
        report(name, {false, std::string("error: ") + e.what()});
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string work = "acceptance_work", weights;
    app.add_option("--work-dir", work, "directory for weights, benchmark and CSVs")->capture_default_str();
    app.add_option("--weights", weights, "reuse trained weights instead of training (training check is skipped)");
    CLI11_PARSE(app, argc, argv);

    Context ctx;
    ctx.work = work;
    fs::create_directories(ctx.work);

    guarded("masked attention matches brute-force reference", masked_attention_oracle);
    guarded("schedule dispatch matches enumerated truth table", dispatch_truth_table);
    guarded("dilation and pyramid properties", mask_properties);
    if (weights.empty()) {
        guarded("training lowers smoothed loss", [&] { return training_smoke(ctx); });
    } else {
        ctx.model.emplace(load_weights(weights));
        std::printf("SKIP training lowers smoothed loss: reused %s\n", weights.c_str());
    }
    if (!ctx.model) {
        std::printf("remaining checks need a trained model\n");
        return 1;
    }
    try {
        build_benchmark(ctx);
    } catch (const std::exception& e) {
        std::printf("benchmark generation failed: %s\n", e.what());
        return 1;
    }
    guarded("empty schedule reproduces the condition", [&] { return degenerate_schedule(ctx); });
    guarded("background-only global injection reproduces the condition", [&] { return full_background_injection(ctx); });
    guarded("batch of three matches sequential branches", [&] { return batch_packing(ctx); });
    guarded("inversion round trip", [&] { return ddim_round_trip(ctx); });
    guarded("swap benchmark beats baselines", [&] { return swap_benchmark(ctx); });
    guarded("injection-length sweep", [&] { return injection_sweep(ctx); });
    return failures == 0 ? 0 : 1;
}
