#include "mcactrl/app/benchmark.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <thread>

#include "mcactrl/app/metrics.hpp"
#include "mcactrl/errors.hpp"

namespace mcactrl {

void parallel_for(int n, int workers, const std::function<void(int)>& job) {
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

TaskRequest request_for_entry(const ManifestEntry& e, const std::filesystem::path& dir, const SamplerConfig& sampler,
                              int dilation) {
    auto path = [&](const std::string& p) { return p == "-" || p.empty() ? std::string() : (dir / p).string(); };
    TaskRequest req;
    req.task = e.task;
    req.subject_image = path(e.subject_image);
    req.subject_query = e.subject_query;
    req.subject_prompt = e.subject_prompt;
    req.prompt = e.prompt;
    req.sampler = sampler;
    req.dilation = dilation;
    if (e.task != TaskKind::Generation) req.condition_image = path(e.condition_image);
    if (e.task == TaskKind::Swapping) req.edit_query = e.edit_query;
    if (e.task == TaskKind::Addition) req.region = path(e.region);
    if (!e.schedule_overrides.empty() && e.schedule_overrides != "-") {
        req.schedule = apply_schedule_overrides(req.resolved_schedule(), e.schedule_overrides);
    }
    return req;
}

namespace {

void write_status(const std::filesystem::path& dir, const std::string& status) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "status.txt") << status << '\n';
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

void run_benchmark(const std::filesystem::path& manifest, const std::filesystem::path& results_dir,
                   const NoisePredictor& model, const NoiseSchedule& noise, const CaseRunOptions& options) {
    const auto entries = read_manifest(manifest);
    const auto dir = manifest.parent_path();
    parallel_for(static_cast<int>(entries.size()), options.workers, [&](int i) {
        const auto& e = entries[static_cast<size_t>(i)];
        const auto out_dir = results_dir / e.id;
        TaskRequest req = request_for_entry(e, dir, options.sampler, options.dilation);
        try {
            const PreparedTask prep = prepare_task(req, model, noise);
            RunOverrides ov;
            ov.full_editable = options.full_regeneration;
            const TaskOutput out =
                run_prepared(prep, model, req.resolved_schedule(), req.sampler, noise, req.order, req.allow_reverse, ov);
            std::filesystem::create_directories(out_dir);
            save_png(out_dir / "target.png", out.target);
            save_mask_png(out_dir / "editable_mask.png", out.editable);
            write_status(out_dir, "ok");
        } catch (const NotFoundError& err) {
            write_status(out_dir, "localization-failed");
        }
    });
}

EvalReport eval_benchmark(const std::filesystem::path& results_dir, const std::filesystem::path& manifest,
                          int dilation) {
    const auto entries = read_manifest(manifest);
    const auto dir = manifest.parent_path();
    EvalReport report;
    std::vector<double> bg, fg, fgo;
    for (const auto& e : entries) {
        EvalRow row;
        row.case_id = e.id;
        row.task = task_name(e.task);
        row.variant = variant_name(e.variant);
        const auto case_dir = results_dir / e.id;
        const auto target_path = case_dir / "target.png";
        std::string status = "ok";
        if (std::ifstream st(case_dir / "status.txt"); st) st >> status;
        if (status == "ok" && !std::filesystem::exists(target_path)) status = "missing";
        if (!std::filesystem::exists(case_dir)) status = "missing";
        row.status = status;
        if (status == "ok") {
            const RgbImage target = load_png(target_path);
            const RgbImage subject = load_png(dir / e.subject_image);
            const BinaryMask subject_mask = load_mask_png(dir / e.subject_mask);
            RgbImage condition;
            BinaryMask edit_region, editable;
            if (e.task == TaskKind::Generation) {
                const auto saved = case_dir / "editable_mask.png";
                editable = std::filesystem::exists(saved) ? load_mask_png(saved)
                                                          : BinaryMask(target.width, target.height, 1);
                edit_region = editable;
                condition = target;
            } else {
                condition = load_png(dir / e.condition_image);
                edit_region = load_mask_png(dir / e.edit_mask);
                editable = dilate(edit_region, {dilation});
            }
            const TaskMetrics m =
                compute_task_metrics(e.task, target, editable, subject, subject_mask, condition, edit_region);
            row.bg_mse = m.bg_mse;
            row.fg_hist_dist = m.fg_hist_dist;
            row.fg_hist_dist_orig = m.fg_hist_dist_orig;
            bg.push_back(m.bg_mse);
            fg.push_back(m.fg_hist_dist);
            fgo.push_back(m.fg_hist_dist_orig);
        }
        report.rows.push_back(std::move(row));
    }
    auto& a = report.aggregate;
    a.count = static_cast<int>(bg.size());
    a.bg_mse_mean = mean(bg);
    a.bg_mse_std = stddev(bg);
    a.fg_mean = mean(fg);
    a.fg_std = stddev(fg);
    a.fg_orig_mean = mean(fgo);
    a.fg_orig_std = stddev(fgo);
    return report;
}

void write_eval_csv(std::ostream& out, const EvalReport& report) {
    out << "case_id,task,variant,status,bg_mse,fg_hist_dist,fg_hist_dist_orig,bg_mse_std,fg_hist_dist_std,"
           "fg_hist_dist_orig_std\n";
    out << std::setprecision(8);
    for (const auto& r : report.rows) {
        out << r.case_id << ',' << r.task << ',' << r.variant << ',' << r.status << ',';
        if (r.status == "ok") {
            out << r.bg_mse << ',' << r.fg_hist_dist << ',' << r.fg_hist_dist_orig;
        } else {
            out << ",,";
        }
        out << ",,,\n";
    }
    const auto& a = report.aggregate;
    out << "aggregate,all,all,n=" << a.count << ',' << a.bg_mse_mean << ',' << a.fg_mean << ',' << a.fg_orig_mean << ','
        << a.bg_mse_std << ',' << a.fg_std << ',' << a.fg_orig_std << '\n';
}

std::vector<std::pair<SweepPoint, std::vector<std::string>>> expand_grid(const SweepGrid& grid, bool allow_reverse) {
    std::vector<std::pair<SweepPoint, std::vector<std::string>>> out;
    for (int s_gi : grid.s_gi) {
        for (int e_gi : grid.e_gi) {
            for (int layer_lq : grid.layer_lq) {
                for (int e_lq : grid.e_lq) {
                    for (int rev = 0; rev <= (grid.include_reverse ? 1 : 0); ++rev) {
                        SweepPoint p;
                        p.reversed = rev == 1;
                        ControlSchedule& s = p.schedule;
                        s.layer_gi = grid.layer_gi;
                        s.layer_lq = layer_lq;
                        s.total_steps = grid.total_steps;
                        if (!p.reversed) {
                            s.s_gi = s_gi;
                            s.e_gi = e_gi;
                            s.s_lq = e_gi;
                            s.e_lq = e_lq;
                        } else {
                            // Same window lengths, SALQ first.
                            s.s_lq = s_gi;
                            s.e_lq = s_gi + (e_lq - e_gi);
                            s.s_gi = s.e_lq;
                            s.e_gi = s.s_gi + (e_gi - s_gi);
                        }
                        auto v = validate_schedule(s, {allow_reverse});
                        out.push_back({p, std::move(v)});
                    }
                }
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        const auto& x = a.first.schedule;
        const auto& y = b.first.schedule;
        return std::tie(a.first.reversed, x.s_gi, x.e_gi, x.layer_lq, x.e_lq) <
               std::tie(b.first.reversed, y.s_gi, y.e_gi, y.layer_lq, y.e_lq);
    });
    return out;
}

namespace {

std::string schedule_label(const SweepPoint& p) {
    const auto& s = p.schedule;
    return "s_gi=" + std::to_string(s.s_gi) + " e_gi=" + std::to_string(s.e_gi) + " s_lq=" + std::to_string(s.s_lq) +
           " e_lq=" + std::to_string(s.e_lq) + " layer_lq=" + std::to_string(s.layer_lq) +
           (p.reversed ? " (reverse)" : "");
}

}  // namespace

SweepResult run_sweep(const std::filesystem::path& manifest, const NoisePredictor& model, const NoiseSchedule& noise,
                      const SweepGrid& grid, const SweepOptions& options) {
    std::vector<ManifestEntry> cases;
    for (const auto& e : read_manifest(manifest)) {
        if (e.task != TaskKind::Swapping) continue;
        if (!options.variant.empty() && variant_name(e.variant) != options.variant) continue;
        cases.push_back(e);
        if (options.max_cases > 0 && static_cast<int>(cases.size()) == options.max_cases) break;
    }
    SweepResult result;
    std::vector<SweepPoint> points;
    for (auto& [p, violations] : expand_grid(grid, options.allow_reverse)) {
        if (violations.empty()) {
            points.push_back(p);
            continue;
        }
        std::string note = "skipped " + schedule_label(p) + ":";
        for (const auto& v : violations) note += " [" + v + "]";
        result.notes.push_back(note);
    }
    if (points.empty() || cases.empty()) return result;

    const auto dir = manifest.parent_path();
    std::vector<std::optional<PreparedTask>> prepared(cases.size());
    std::vector<std::string> prep_status(cases.size(), "ok");
    std::vector<TaskRequest> requests;
    for (const auto& e : cases) requests.push_back(request_for_entry(e, dir, options.sampler, options.dilation));
    parallel_for(static_cast<int>(cases.size()), options.workers, [&](int i) {
        try {
            prepared[static_cast<size_t>(i)] = prepare_task(requests[static_cast<size_t>(i)], model, noise);
        } catch (const NotFoundError&) {
            prep_status[static_cast<size_t>(i)] = "localization-failed";
        }
    });

    const int n_cases = static_cast<int>(cases.size());
    result.rows.resize(points.size() * cases.size());
    parallel_for(static_cast<int>(result.rows.size()), options.workers, [&](int idx) {
        const int pi = idx / n_cases, ci = idx % n_cases;
        SweepRow& row = result.rows[static_cast<size_t>(idx)];
        row.point = points[static_cast<size_t>(pi)];
        row.case_id = cases[static_cast<size_t>(ci)].id;
        row.status = prep_status[static_cast<size_t>(ci)];
        if (row.status != "ok") return;
        try {
            const TaskOutput out = run_prepared(*prepared[static_cast<size_t>(ci)], model, row.point.schedule,
                                                options.sampler, noise, FusionOrder::SubjectInside, options.allow_reverse);
            row.metrics = out.metrics;
        } catch (const std::exception& e) {
            row.status = std::string("failed: ") + e.what();
        }
    });
    return result;
}

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
    out << "s_gi,e_gi,s_lq,e_lq,layer_gi,layer_lq,order,case_id,status,bg_mse,fg_hist_dist,fg_hist_dist_orig\n";
    out << std::setprecision(8);
    for (const auto& r : result.rows) {
        const auto& s = r.point.schedule;
        std::string status = r.status;
        std::replace(status.begin(), status.end(), ',', ';');
        out << s.s_gi << ',' << s.e_gi << ',' << s.s_lq << ',' << s.e_lq << ',' << s.layer_gi << ',' << s.layer_lq
            << ',' << (r.point.reversed ? "reverse" : "forward") << ',' << r.case_id << ',' << status << ',';
        if (r.status == "ok") {
            out << r.metrics.bg_mse << ',' << r.metrics.fg_hist_dist << ',' << r.metrics.fg_hist_dist_orig;
        } else {
            out << ",,";
        }
        out << '\n';
    }
}

}  // namespace mcactrl
