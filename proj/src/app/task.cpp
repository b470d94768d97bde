#include "mcactrl/app/task.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "mcactrl/app/metrics.hpp"
#include "mcactrl/errors.hpp"
#include "mcactrl/mask/segment.hpp"

namespace mcactrl {

namespace {

const char* const kScheduleKeys[] = {"s_gi", "e_gi", "s_lq", "e_lq", "layer_gi", "layer_lq", "total_steps"};

std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T v{};
    if (!(in >> v) || !(in >> std::ws).eof()) throw ConfigError("key '" + key + "' has malformed value '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("key '" + key + "' needs true or false, got '" + value + "'");
}

const char* fusion_name(FusionOrder o) { return o == FusionOrder::SubjectInside ? "subject-inside" : "printed"; }

TokenSeq encode_prompt(const std::string& what, const std::string& text) {
    try {
        return Vocabulary::instance().encode(text);
    } catch (const std::exception& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (base / p).lexically_normal().string();
}

}  // namespace

ControlSchedule TaskRequest::resolved_schedule() const {
    if (schedule) return *schedule;
    const std::string name = schedule_preset.value_or(task == TaskKind::Generation ? "gen-uniform" : "swap-uniform");
    const auto preset = mcactrl::schedule_preset(name);
    if (!preset) throw ConfigError("unknown schedule preset '" + name + "'");
    return rescale_schedule(*preset, sampler.steps);
}

void TaskRequest::validate() const {
    if (subject_image.empty()) throw ConfigError("missing required key 'subject_image'");
    if (subject_query.empty() && subject_mask.empty()) {
        throw ConfigError("missing required key 'subject_query' (or 'subject_mask')");
    }
    if (subject_prompt.empty()) throw ConfigError("missing required key 'subject_prompt'");
    if (prompt.empty()) throw ConfigError("missing required key 'prompt'");
    if (task == TaskKind::Generation) {
        if (!condition_image.empty()) throw ConfigError("generation takes a text prompt, not 'condition_image'");
    } else if (condition_image.empty()) {
        throw ConfigError(std::string("missing required key 'condition_image' for ") + task_name(task));
    }
    if (task == TaskKind::Swapping && edit_query.empty()) throw ConfigError("missing required key 'edit_query'");
    if (task == TaskKind::Addition && region.empty()) throw ConfigError("missing required key 'region'");
    if (schedule_preset && schedule) throw ConfigError("preset and explicit schedule both given");
    if (dilation < 0) throw ConfigError("dilation must be >= 0");
    try {
        sampler.validate(make_noise_schedule());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const ControlSchedule s = resolved_schedule();
    const auto violations = validate_schedule(s, {allow_reverse});
    if (!violations.empty()) {
        std::string msg = "invalid control schedule:";
        for (const auto& v : violations) msg += " [" + v + "]";
        throw ConfigError(msg);
    }
    if (s.total_steps != sampler.steps) {
        throw ConfigError("schedule total_steps " + std::to_string(s.total_steps) + " differs from steps " +
                          std::to_string(sampler.steps));
    }
}

TaskRequest parse_task_request(std::string_view text, const std::filesystem::path& base_dir) {
    TaskRequest req;
    std::set<std::string> seen;
    ControlSchedule explicit_schedule;
    bool any_schedule_key = false;
    bool total_given = false;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const std::string item = trim(line);
        if (item.empty() || item[0] == '#') continue;
        const size_t eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + item + "'");
        const std::string key = trim(std::string_view(item).substr(0, eq));
        const std::string val = trim(std::string_view(item).substr(eq + 1));
        if (!seen.insert(key).second) throw ConfigError("key '" + key + "' given twice");
        if (std::find(std::begin(kScheduleKeys), std::end(kScheduleKeys), key) != std::end(kScheduleKeys)) {
            explicit_schedule = apply_schedule_overrides(explicit_schedule, key + "=" + val);
            any_schedule_key = true;
            total_given = total_given || key == "total_steps";
        } else if (key == "task") {
            try {
                req.task = parse_task(val);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        } else if (key == "subject_image") {
            req.subject_image = resolve(base_dir, val);
        } else if (key == "subject_query") {
            req.subject_query = val;
        } else if (key == "subject_mask") {
            req.subject_mask = resolve(base_dir, val);
        } else if (key == "subject_prompt") {
            req.subject_prompt = val;
        } else if (key == "condition_image") {
            req.condition_image = resolve(base_dir, val);
        } else if (key == "edit_query") {
            req.edit_query = val;
        } else if (key == "region") {
            req.region = resolve(base_dir, val);
        } else if (key == "prompt") {
            req.prompt = val;

        } else if (key == "mask_token") {
            req.mask_token = val;
        } else if (key == "schedule_preset") {
            if (!mcactrl::schedule_preset(val)) throw ConfigError("unknown schedule preset '" + val + "'");
            req.schedule_preset = val;
        } else if (key == "steps") {
            req.sampler.steps = parse_number<int>(key, val);
        } else if (key == "guidance") {
            req.sampler.guidance_scale = parse_number<double>(key, val);
        } else if (key == "inversion_guidance") {
            req.sampler.inversion_guidance = parse_number<double>(key, val);
        } else if (key == "seed") {
            req.sampler.seed = parse_number<uint64_t>(key, val);
        } else if (key == "dilation") {
            req.dilation = parse_number<int>(key, val);
        } else if (key == "allow_reverse") {
            req.allow_reverse = parse_bool(key, val);
        } else if (key == "fusion_order") {
            if (val == "subject-inside") {
                req.order = FusionOrder::SubjectInside;
            } else if (val == "printed") {
                req.order = FusionOrder::PrintedOrder;
            } else {
                throw ConfigError("fusion_order must be subject-inside or printed, got '" + val + "'");
            }
        } else if (key == "out") {
            req.output_dir = resolve(base_dir, val);
        } else {
            throw ConfigError("unknown key '" + key + "'");
        }
    }
    if (any_schedule_key) {
        if (req.schedule_preset) throw ConfigError("preset and explicit schedule both given");
        if (!total_given) explicit_schedule.total_steps = req.sampler.steps;
        req.schedule = explicit_schedule;
    }
    return req;
}

TaskRequest load_task_request(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_task_request(buf.str(), path.parent_path());
}

std::string format_task_request(const TaskRequest& r) {
    std::ostringstream out;
    auto put = [&](const char* key, const std::string& v) {
        if (!v.empty()) out << key << '=' << v << '\n';
    };
    out << "task=" << task_name(r.task) << '\n';
    put("subject_image", r.subject_image);
    put("subject_query", r.subject_query);
    put("subject_mask", r.subject_mask);
    put("subject_prompt", r.subject_prompt);
    put("condition_image", r.condition_image);
    put("edit_query", r.edit_query);
    put("region", r.region);
    put("prompt", r.prompt);
    put("mask_token", r.mask_token);
    if (r.schedule_preset) put("schedule_preset", *r.schedule_preset);
    if (r.schedule) out << format_schedule(*r.schedule);
    out << "steps=" << r.sampler.steps << '\n';
    {
        std::ostringstream g;
        g.precision(17);
        g << r.sampler.guidance_scale;
        put("guidance", g.str());
        g.str("");
        g << r.sampler.inversion_guidance;
        put("inversion_guidance", g.str());
    }
    out << "seed=" << r.sampler.seed << '\n';
    out << "dilation=" << r.dilation << '\n';
    out << "allow_reverse=" << (r.allow_reverse ? "true" : "false") << '\n';
    out << "fusion_order=" << fusion_name(r.order) << '\n';
    put("out", r.output_dir);
    return out.str();
}

PreparedTask prepare_task(const TaskRequest& req, const NoisePredictor& model, const NoiseSchedule& noise) {
    req.validate();
    PreparedTask prep;
    prep.task = req.task;
    prep.subject = load_png(req.subject_image);
    prep.subject_mask = req.subject_mask.empty() ? segment_synthetic(prep.subject, ObjectQuery::parse(req.subject_query))
                                                 : load_mask_png(req.subject_mask);
    if (prep.subject_mask.width != prep.subject.width || prep.subject_mask.height != prep.subject.height) {
        throw ConfigError("subject mask size differs from the subject image");
    }
    const TokenSeq sub_tokens = encode_prompt("subject_prompt", req.subject_prompt);
    const TokenSeq prompt_tokens = encode_prompt("prompt", req.prompt);
    auto invert = [&](const RgbImage& img, const TokenSeq& tokens) {
        return ddim_invert(model, image_to_latent(img), {tokens}, req.sampler, noise).front();
    };

    BranchBundle& b = prep.bundle;
    b.subject_tokens = sub_tokens;
    b.condition_tokens = prompt_tokens;
    b.target_tokens = prompt_tokens;
    b.subject_start = invert(prep.subject, sub_tokens);
    const int w = prep.subject.width, h = prep.subject.height;
    if (req.task == TaskKind::Generation) {
        b.condition_start = gaussian_latent(b.subject_start.shape, req.sampler.seed);
        std::string word = req.mask_token;
        if (word.empty()) {
            const auto q = ObjectQuery::parse(req.subject_query.empty() ? "white circle" : req.subject_query);
            word = shape_name(q.shape);
        }
        const auto& vocab = Vocabulary::instance();
        const auto it = vocab.contains(word)
                            ? std::find(prompt_tokens.begin(), prompt_tokens.end(), vocab.id(word))
                            : prompt_tokens.end();
        if (it == prompt_tokens.end()) throw ConfigError("mask token '" + word + "' does not occur in the prompt");
        TextMaskConfig tm;
        tm.token_index = static_cast<int>(it - prompt_tokens.begin());
        tm.prompt_length = static_cast<int>(prompt_tokens.size());
        tm.dilation = {req.dilation};
        prep.text_mask = tm;
        prep.edit_region = BinaryMask(w, h);
        prep.editable = BinaryMask(w, h);
    } else {
        prep.condition = load_png(req.condition_image);
        if (prep.condition.width != w || prep.condition.height != h) {
            throw ConfigError("condition and subject images differ in size");
        }
        prep.edit_region = req.task == TaskKind::Swapping
                               ? segment_synthetic(prep.condition, ObjectQuery::parse(req.edit_query))
                               : load_region(req.region, w, h);
        prep.editable = dilate(prep.edit_region, {req.dilation});
        b.condition_start = invert(prep.condition, prompt_tokens);
        b.source_prompts_as_negative = true;
    }
    b.target_start = b.condition_start;
    return prep;
}

TaskMetrics compute_task_metrics(TaskKind task, const RgbImage& target, const BinaryMask& editable,
                                 const RgbImage& subject, const BinaryMask& subject_mask, const RgbImage& condition,
                                 const BinaryMask& edit_region) {
    TaskMetrics m;
    m.fg_hist_dist = fg_hist_dist(target, editable, subject, subject_mask);
    if (task != TaskKind::Generation) m.bg_mse = bg_mse(target, condition, editable);
    if (task == TaskKind::Swapping) m.fg_hist_dist_orig = fg_hist_dist(target, editable, condition, edit_region);
    return m;
}

TaskOutput run_prepared(const PreparedTask& prep, const NoisePredictor& model, const ControlSchedule& schedule,
                        const SamplerConfig& sampler, const NoiseSchedule& noise, FusionOrder order,
                        bool allow_reverse, RunOverrides overrides) {
    std::vector<std::pair<int, int>> res;
    for (const auto& info : model.attention_layers()) res.push_back({info.height, info.width});
    const int w = prep.subject.width, h = prep.subject.height;
    PipelineMasks masks;
    masks.subject = build_pyramid(prep.subject_mask, res);
    PipelineOptions opts;
    opts.order = order;
    opts.allow_reverse = allow_reverse;
    opts.sequential = overrides.sequential;
    if (overrides.full_editable) {
        masks.editable = build_pyramid(BinaryMask(w, h, 1), res);
    } else if (prep.text_mask) {
        opts.text_mask = prep.text_mask;
    } else {
        masks.editable = build_pyramid(prep.editable, res);
    }
    const PipelineResult r = run_pipeline(model, prep.bundle, schedule, masks, sampler, noise, opts);
    TaskOutput out;
    out.target = latent_to_image(r.target);
    out.subject_reconstruction = latent_to_image(r.subject);
    out.condition_reconstruction = latent_to_image(r.condition);
    if (overrides.full_editable) {
        out.editable = BinaryMask(w, h, 1);
    } else if (prep.text_mask) {
        out.editable = r.editable_masks.empty() ? BinaryMask(w, h) : r.editable_masks.back();
    } else {
        out.editable = prep.editable;
    }
    // Metrics always use the case's own region so baselines are scored alike.
    const BinaryMask& scored = prep.text_mask ? out.editable : prep.editable;
    out.metrics = compute_task_metrics(prep.task, out.target, scored, prep.subject, prep.subject_mask,
                                       prep.task == TaskKind::Generation ? out.condition_reconstruction : prep.condition,
                                       prep.edit_region);
    return out;
}

TaskOutput run_task(const TaskRequest& req, const NoisePredictor& model, const NoiseSchedule& noise) {
    const PreparedTask prep = prepare_task(req, model, noise);
    TaskOutput out = run_prepared(prep, model, req.resolved_schedule(), req.sampler, noise, req.order, req.allow_reverse);
    if (!req.output_dir.empty()) {
        const std::filesystem::path dir(req.output_dir);
        save_png(dir / "target.png", out.target);
        save_png(dir / "subject_recon.png", out.subject_reconstruction);
        save_png(dir / "condition_recon.png", out.condition_reconstruction);
        save_mask_png(dir / "subject_mask.png", prep.subject_mask);
        save_mask_png(dir / "editable_mask.png", out.editable);
        std::ofstream m(dir / "metrics.txt");
        m << "bg_mse=" << out.metrics.bg_mse << "\nfg_hist_dist=" << out.metrics.fg_hist_dist
          << "\nfg_hist_dist_orig=" << out.metrics.fg_hist_dist_orig << '\n';
    }
    return out;
}

}  // namespace mcactrl
