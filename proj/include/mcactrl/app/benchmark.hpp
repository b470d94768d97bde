#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mcactrl/app/task.hpp"

namespace mcactrl {

/// Task request for one manifest line; paths resolve against `manifest_dir`.
TaskRequest request_for_entry(const ManifestEntry& e, const std::filesystem::path& manifest_dir,
                              const SamplerConfig& sampler, int dilation = 1);

struct CaseRunOptions {
    SamplerConfig sampler{};
    int dilation = 1;
    /// Score against an edit mask covering the whole canvas instead (baseline).
    bool full_regeneration = false;
    int workers = 1;
};

/// Runs every manifest case, writing results/<case id>/. Localisation
/// failures are recorded in status.txt rather than thrown.
void run_benchmark(const std::filesystem::path& manifest, const std::filesystem::path& results_dir,
                   const NoisePredictor& model, const NoiseSchedule& noise, const CaseRunOptions& options);

struct EvalRow {
    std::string case_id;
    std::string task;
    std::string variant;
    std::string status;  // ok, missing, localization-failed, ...
    double bg_mse = 0.0;
    double fg_hist_dist = 0.0;
    double fg_hist_dist_orig = 0.0;
};

struct EvalAggregate {
    int count = 0;
    double bg_mse_mean = 0.0, bg_mse_std = 0.0;
    double fg_mean = 0.0, fg_std = 0.0;
    double fg_orig_mean = 0.0, fg_orig_std = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;  // sorted by case id
    EvalAggregate aggregate;    // over rows with status ok
};

EvalReport eval_benchmark(const std::filesystem::path& results_dir, const std::filesystem::path& manifest,
                          int dilation = 1);
void write_eval_csv(std::ostream& out, const EvalReport& report);

struct SweepGrid {
    std::vector<int> s_gi{0};
    std::vector<int> e_gi{20};
    std::vector<int> layer_lq{8};
    std::vector<int> e_lq{48};
    int layer_gi = 0;
    int total_steps = 50;
    /// Also emit SALQ-first variants of every point (needs allow_reverse to be valid).
    bool include_reverse = false;
};

struct SweepPoint {
    ControlSchedule schedule;
    bool reversed = false;
};

/// Every grid point in sorted order, with the clauses it violates (empty if valid).
std::vector<std::pair<SweepPoint, std::vector<std::string>>> expand_grid(const SweepGrid& grid, bool allow_reverse);

struct SweepRow {
    SweepPoint point;
    std::string case_id;
    std::string status;
    TaskMetrics metrics;
};

struct SweepOptions {
    SamplerConfig sampler{};
    int dilation = 1;
    bool allow_reverse = false;
    int workers = 1;
    /// Only swapping cases of this variant ("" for all swapping cases).
    std::string variant = "clean";
    int max_cases = 0;  // 0 = no limit
};

struct SweepResult {
    std::vector<SweepRow> rows;      // sorted by parameters, then case id
    std::vector<std::string> notes;  // skipped grid points
};

SweepResult run_sweep(const std::filesystem::path& manifest, const NoisePredictor& model, const NoiseSchedule& noise,
                      const SweepGrid& grid, const SweepOptions& options);
void write_sweep_csv(std::ostream& out, const SweepResult& result);

/// Runs `job(i)` for i in [0, n) on `workers` threads; the first exception is rethrown.
void parallel_for(int n, int workers, const std::function<void(int)>& job);

}  // namespace mcactrl
