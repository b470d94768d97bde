#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mcactrl/app/benchmark.hpp"
#include "mcactrl/app/task.hpp"
#include "mcactrl/core/io.hpp"
#include "mcactrl/core/training.hpp"
#include "mcactrl/errors.hpp"
#include "mcactrl/scene/scene.hpp"

using namespace mcactrl;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kLocalization = 3, kRuntime = 4 };

int fail(const char* kind, const std::string& message, int code) {
    std::cerr << nlohmann::json{{"status", "error"}, {"kind", kind}, {"message", message}}.dump() << '\n';
    return code;
}

struct SamplerFlags {
    int steps = 50;
    double guidance = 7.5;
    uint64_t seed = 0;
    CLI::Option* steps_opt = nullptr;
    CLI::Option* guidance_opt = nullptr;
    CLI::Option* seed_opt = nullptr;

    void add(CLI::App* cmd) {
        steps_opt = cmd->add_option("--steps", steps, "DDIM steps")->capture_default_str();
        guidance_opt = cmd->add_option("--guidance", guidance, "classifier-free guidance scale")->capture_default_str();
        seed_opt = cmd->add_option("--seed", seed, "random seed")->capture_default_str();
    }
    void apply(SamplerConfig& s) const {
        if (steps_opt->count()) s.steps = steps;
        if (guidance_opt->count()) s.guidance_scale = guidance;
        if (seed_opt->count()) s.seed = seed;
    }
    SamplerConfig config() const {
        SamplerConfig s;
        s.steps = steps;
        s.guidance_scale = guidance;
        s.seed = seed;
        return s;
    }
};

struct ScheduleFlags {
    std::string preset;
    int s_gi = 0, e_gi = 0, e_lq = 0, layer_gi = 0, layer_lq = 0;
    std::vector<CLI::Option*> explicit_opts;
    CLI::Option* preset_opt = nullptr;
    bool allow_reverse = false;

    void add(CLI::App* cmd) {
        preset_opt = cmd->add_option("--schedule-preset", preset, "swap-uniform or gen-uniform");
        explicit_opts = {cmd->add_option("--s-gi", s_gi, "first SAGI step"),
                         cmd->add_option("--e-gi", e_gi, "end of SAGI (start of SALQ)"),
                         cmd->add_option("--e-lq", e_lq, "end of SALQ"),
                         cmd->add_option("--layer-gi", layer_gi, "first SAGI layer (16-layer scale)"),
                         cmd->add_option("--layer-lq", layer_lq, "first SALQ layer (16-layer scale)")};
        cmd->add_flag("--allow-reverse", allow_reverse, "accept a SALQ-first schedule");
    }
    bool any_explicit() const {
        for (auto* o : explicit_opts) {
            if (o->count()) return true;
        }
        return false;
    }
    void apply(TaskRequest& req) const {
        req.allow_reverse = req.allow_reverse || allow_reverse;
        if (preset_opt->count()) {
            if (!schedule_preset(preset)) throw ConfigError("unknown schedule preset '" + preset + "'");
            if (any_explicit() || req.schedule) throw ConfigError("preset and explicit schedule both given");
            req.schedule_preset = preset;
        }
        if (!any_explicit()) return;
        if (req.schedule_preset) throw ConfigError("preset and explicit schedule both given");
        ControlSchedule s = req.resolved_schedule();
        if (explicit_opts[0]->count()) s.s_gi = s_gi;
        if (explicit_opts[1]->count()) s.e_gi = e_gi;
        if (explicit_opts[2]->count()) s.e_lq = e_lq;
        if (explicit_opts[3]->count()) s.layer_gi = layer_gi;
        if (explicit_opts[4]->count()) s.layer_lq = layer_lq;
        s.s_lq = s.e_gi;
        req.schedule = s;
    }
};

std::vector<int> parse_grid(const std::string& text) {
    std::vector<int> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("grid value '" + item + "' is not an integer");
        }
    }
    if (out.empty()) throw ConfigError("empty grid");
    return out;
}

ToyDenoiser load_model(const std::string& path) {
    if (path.empty()) throw ConfigError("--weights is required");
    return load_weights(path);
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mask-controlled attention customization on a toy diffusion model"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write the synthetic training set or benchmark");
    std::string synth_kind = "benchmark", synth_out;
    int synth_n = 512, synth_subjects = 2, synth_conditions = 10, synth_prompts = 5;
    uint64_t synth_seed = 0;
    synth->add_option("--kind", synth_kind, "train or benchmark")->check(CLI::IsMember({"train", "benchmark"}))->capture_default_str();
    synth->add_option("--n", synth_n, "training scenes")->capture_default_str();
    synth->add_option("--subjects", synth_subjects)->capture_default_str();
    synth->add_option("--conditions", synth_conditions, "swap and addition cases per subject")->capture_default_str();
    synth->add_option("--prompts", synth_prompts, "generation prompts per subject")->capture_default_str();
    synth->add_option("--seed", synth_seed)->capture_default_str();
    synth->add_option("--out", synth_out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train the toy denoiser on synthetic scenes");
    TrainingConfig tcfg;
    tcfg.batch_size = 8;
    int train_scenes = 512;
    std::string train_out, loss_log;
    train->add_option("--scenes", train_scenes)->capture_default_str();
    train->add_option("--iterations", tcfg.steps, "optimizer steps")->capture_default_str();
    train->add_option("--batch", tcfg.batch_size)->capture_default_str();
    train->add_option("--lr", tcfg.learning_rate)->capture_default_str();
    train->add_option("--seed", tcfg.seed)->capture_default_str();
    train->add_option("--out,--weights", train_out, "weights file to write")->required();
    train->add_option("--loss-log", loss_log, "CSV of per-step losses");

    // invert
    auto* invert = app.add_subcommand("invert", "DDIM-invert an image and optionally resample it");
    std::string inv_weights, inv_image, inv_prompt, inv_out, inv_recon;
    SamplerFlags inv_flags;
    invert->add_option("--weights", inv_weights)->required();
    invert->add_option("--image", inv_image)->required();
    invert->add_option("--prompt", inv_prompt, "caption")->required();
    invert->add_option("--out", inv_out, "tensor file for the inverted noise")->required();
    invert->add_option("--reconstruct", inv_recon, "PNG of the resampled image (guidance 1)");
    inv_flags.add(invert);

    // generate / swap / add
    struct TaskFlags {
        CLI::App* cmd = nullptr;
        TaskKind task{};
        std::string config, weights, out, subject, subject_query, subject_mask, subject_prompt, condition, edit_query,
            region, prompt, mask_token;
        int dilation = 1;
        SamplerFlags sampler;
        ScheduleFlags schedule;
    };
    std::vector<std::unique_ptr<TaskFlags>> tasks;
    for (auto [name, kind, help] : {std::tuple{"generate", TaskKind::Generation, "subject generation from a prompt"},
                                    std::tuple{"swap", TaskKind::Swapping, "replace an object by the subject"},
                                    std::tuple{"add", TaskKind::Addition, "insert the subject into a region"}}) {
        auto f = std::make_unique<TaskFlags>();
        f->task = kind;
        f->cmd = app.add_subcommand(name, help);
        auto* c = f->cmd;
        c->add_option("--config", f->config, "key=value task file");
        c->add_option("--weights", f->weights);
        c->add_option("--out", f->out, "output directory");
        c->add_option("--subject", f->subject, "subject image PNG");
        c->add_option("--subject-query", f->subject_query, "e.g. \"red circle\"");
        c->add_option("--subject-mask", f->subject_mask, "subject mask PNG instead of a query");
        c->add_option("--subject-prompt", f->subject_prompt, "subject caption");
        c->add_option("--prompt", f->prompt, "condition caption, or the target prompt for generate");
        if (kind != TaskKind::Generation) c->add_option("--condition", f->condition, "condition image PNG");
        if (kind == TaskKind::Swapping) c->add_option("--edit-query", f->edit_query, "object to replace");
        if (kind == TaskKind::Addition) c->add_option("--region", f->region, "region file `x0 y0 x1 y1`");
        if (kind == TaskKind::Generation) c->add_option("--mask-token", f->mask_token, "prompt word locating the subject");
        c->add_option("--dilation", f->dilation, "editable mask dilation iterations");
        f->sampler.add(c);
        f->schedule.add(c);
        tasks.push_back(std::move(f));
    }

    // eval
    auto* eval = app.add_subcommand("eval", "score benchmark results");
    std::string ev_manifest, ev_results, ev_weights, ev_out;
    bool ev_run = false, ev_baseline = false;
    int ev_workers = 1, ev_dilation = 1;
    SamplerFlags ev_flags;
    eval->add_option("--manifest", ev_manifest)->required();
    eval->add_option("--results", ev_results, "results directory")->required();
    eval->add_flag("--run", ev_run, "run every case first (needs --weights)");
    eval->add_flag("--baseline", ev_baseline, "with --run: regenerate the whole canvas");
    eval->add_option("--weights", ev_weights);
    eval->add_option("--workers", ev_workers)->capture_default_str();
    eval->add_option("--dilation", ev_dilation)->capture_default_str();
    eval->add_option("--out", ev_out, "CSV path (stdout if absent)");
    ev_flags.add(eval);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "grid over schedule parameters");
    std::string sw_manifest, sw_weights, sw_out, sw_variant = "clean";
    std::string g_sgi = "0", g_egi = "0,5,10,15,20,25,30,35", g_llq = "8", g_elq = "48";
    bool sw_reverse = false, sw_allow_reverse = false;
    int sw_workers = 1, sw_max = 0, sw_layer_gi = 0;
    SamplerFlags sw_flags;
    sweep->add_option("--manifest", sw_manifest)->required();
    sweep->add_option("--weights", sw_weights)->required();
    sweep->add_option("--s-gi-grid", g_sgi)->capture_default_str();
    sweep->add_option("--e-gi-grid", g_egi)->capture_default_str();
    sweep->add_option("--layer-lq-grid", g_llq)->capture_default_str();
    sweep->add_option("--e-lq-grid", g_elq)->capture_default_str();
    sweep->add_option("--layer-gi", sw_layer_gi)->capture_default_str();
    sweep->add_flag("--reverse", sw_reverse, "add SALQ-first variants of each point");
    sweep->add_flag("--allow-reverse", sw_allow_reverse, "accept SALQ-first schedules");
    sweep->add_option("--variant", sw_variant, "swap case variant to use (empty for all)")->capture_default_str();
    sweep->add_option("--max-cases", sw_max)->capture_default_str();
    sweep->add_option("--workers", sw_workers)->capture_default_str();
    sweep->add_option("--out", sw_out, "CSV path (stdout if absent)");
    sw_flags.add(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("config", e.what(), kConfig);
    }

    try {
        const NoiseSchedule noise = make_noise_schedule();
        if (*synth) {
            if (synth_kind == "benchmark") {
                BenchmarkConfig bc;
                bc.subjects = synth_subjects;
                bc.conditions_per_subject = synth_conditions;
                bc.prompts_per_subject = synth_prompts;
                bc.seed = synth_seed;
                const auto cases = make_benchmark(bc);
                write_benchmark(synth_out, cases);
                std::cout << "wrote " << cases.size() << " cases to " << synth_out << "/manifest.tsv\n";
            } else {
                const auto specs = sample_training_specs(synth_n, synth_seed);
                std::ofstream captions(std::filesystem::path(synth_out) / "captions.tsv");
                for (size_t i = 0; i < specs.size(); ++i) {
                    const std::string name = "scene_" + std::to_string(i) + ".png";
                    save_png(std::filesystem::path(synth_out) / name, render_scene(specs[i]).image);
                    captions << name << '\t' << scene_caption(specs[i]) << '\n';
                }
                std::cout << "wrote " << specs.size() << " scenes to " << synth_out << '\n';
            }
        } else if (*train) {
            const auto data = make_training_dataset(train_scenes, tcfg.seed);
            const auto result = train_toy_denoiser(data, tcfg, noise, [&](int step, double loss) {
                if (step % 100 == 0) std::cerr << "step " << step << " loss " << loss << '\n';
            });
            save_weights(train_out, result.model);
            if (!loss_log.empty()) {
                std::ostringstream log;
                log << "step,loss\n";
                for (size_t i = 0; i < result.losses.size(); ++i) log << i << ',' << result.losses[i] << '\n';
                write_text(loss_log, log.str());
            }
            std::cout << "saved " << train_out << '\n';
        } else if (*invert) {
            const ToyDenoiser model = load_model(inv_weights);
            SamplerConfig sc = inv_flags.config();
            const TokenSeq tokens = Vocabulary::instance().encode(inv_prompt);
            const auto traj = ddim_invert(model, image_to_latent(load_png(inv_image)), {tokens}, sc, noise);
            save_tensor(inv_out, traj.front().to_tensor());
            if (!inv_recon.empty()) {
                sc.guidance_scale = sc.inversion_guidance;
                save_png(inv_recon, latent_to_image(ddim_sample(model, traj.front(), {tokens}, sc, noise).back()));
            }
        } else if (*eval) {
            if (ev_run) {
                const ToyDenoiser model = load_model(ev_weights);
                CaseRunOptions opts;
                opts.sampler = ev_flags.config();
                opts.dilation = ev_dilation;
                opts.full_regeneration = ev_baseline;
                opts.workers = ev_workers;
                run_benchmark(ev_manifest, ev_results, model, noise, opts);
            }
            std::ostringstream csv;
            write_eval_csv(csv, eval_benchmark(ev_results, ev_manifest, ev_dilation));
            write_text(ev_out, csv.str());
        } else if (*sweep) {
            const ToyDenoiser model = load_model(sw_weights);
            SweepGrid grid;
            grid.s_gi = parse_grid(g_sgi);
            grid.e_gi = parse_grid(g_egi);
            grid.layer_lq = parse_grid(g_llq);
            grid.e_lq = parse_grid(g_elq);
            grid.layer_gi = sw_layer_gi;
            grid.total_steps = sw_flags.steps;
            grid.include_reverse = sw_reverse;
            SweepOptions opts;
            opts.sampler = sw_flags.config();
            opts.allow_reverse = sw_allow_reverse;
            opts.workers = sw_workers;
            opts.variant = sw_variant;
            opts.max_cases = sw_max;
            const SweepResult result = run_sweep(sw_manifest, model, noise, grid, opts);
            for (const auto& n : result.notes) std::cerr << n << '\n';
            std::ostringstream csv;
            write_sweep_csv(csv, result);
            write_text(sw_out, csv.str());
        } else {
            for (const auto& f : tasks) {
                if (!*f->cmd) continue;
                TaskRequest req;
                if (!f->config.empty()) {
                    req = load_task_request(f->config);
                    if (req.task != f->task) {
                        throw ConfigError(std::string("config describes a ") + task_name(req.task) + " task");
                    }
                }
                req.task = f->task;
                auto set = [&](std::string& dst, const std::string& v) {
                    if (!v.empty()) dst = v;
                };
                set(req.subject_image, f->subject);
                set(req.subject_query, f->subject_query);
                set(req.subject_mask, f->subject_mask);
                set(req.subject_prompt, f->subject_prompt);
                set(req.condition_image, f->condition);
                set(req.edit_query, f->edit_query);
                set(req.region, f->region);
                set(req.prompt, f->prompt);
                set(req.mask_token, f->mask_token);
                set(req.output_dir, f->out);
                if (f->cmd->count("--dilation")) req.dilation = f->dilation;
                f->sampler.apply(req.sampler);
                f->schedule.apply(req);
                if (req.output_dir.empty()) throw ConfigError("--out is required");
                req.validate();
                const ToyDenoiser model = load_model(f->weights);
                const TaskOutput out = run_task(req, model, noise);
                std::cout << nlohmann::json{{"status", "ok"},
                                            {"out", req.output_dir},
                                            {"bg_mse", out.metrics.bg_mse},
                                            {"fg_hist_dist", out.metrics.fg_hist_dist}}
                                 .dump()
                          << '\n';
            }
        }
    } catch (const ConfigError& e) {
        return fail("config", e.what(), kConfig);
    } catch (const NotFoundError& e) {
        return fail("localization", std::string("subject localization failed: ") + e.what(), kLocalization);
    } catch (const FormatError& e) {
        return fail("config", e.what(), kConfig);
    } catch (const std::invalid_argument& e) {
        return fail("config", e.what(), kConfig);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), kRuntime);
    }
    return kOk;
}
