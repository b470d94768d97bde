#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "mcactrl/control/pipeline.hpp"
#include "mcactrl/scene/scene.hpp"

namespace mcactrl {

/// One customization job. Swapping and addition edit a condition image;
/// generation starts the condition branch from noise and follows `prompt`.
struct TaskRequest {
    TaskKind task = TaskKind::Swapping;
    std::string subject_image;
    /// Either a segmentation query ("red circle") or an explicit mask PNG.
    std::string subject_query;
    std::string subject_mask;
    std::string subject_prompt;
    std::string condition_image;
    /// Swapping: the object to replace.
    std::string edit_query;
    /// Addition: region file with the box to fill.
    std::string region;
    /// Condition caption for image tasks, target prompt for generation.
    std::string prompt;
    /// Generation: prompt word whose cross-attention defines the editable
    /// region. Defaults to the subject's shape word.
    std::string mask_token;
    std::optional<std::string> schedule_preset;
    std::optional<ControlSchedule> schedule;
    SamplerConfig sampler{};
    int dilation = 1;
    bool allow_reverse = false;
    FusionOrder order = FusionOrder::SubjectInside;
    std::string output_dir;

    /// Preset, explicit schedule, or the task's default preset.
    ControlSchedule resolved_schedule() const;
    /// Throws ConfigError naming the first missing or inconsistent field.
    void validate() const;
};

/// key=value text, one per line; `#` starts a comment. Unknown keys are
/// rejected. Relative paths are resolved against `base_dir` when given.
TaskRequest parse_task_request(std::string_view text, const std::filesystem::path& base_dir = {});
TaskRequest load_task_request(const std::filesystem::path& path);
std::string format_task_request(const TaskRequest& req);

/// Images, masks and inverted starting states for one job. Independent of the
/// control schedule, so sweeps build it once per case.
struct PreparedTask {
    TaskKind task = TaskKind::Swapping;
    RgbImage subject;
    BinaryMask subject_mask;
    RgbImage condition;  // empty for generation
    /// Undilated region to edit (object or box) and its dilation.
    BinaryMask edit_region;
    BinaryMask editable;
    BranchBundle bundle;
    std::optional<TextMaskConfig> text_mask;
};

/// Localisation failures surface as NotFoundError.
PreparedTask prepare_task(const TaskRequest& req, const NoisePredictor& model, const NoiseSchedule& noise);

struct TaskMetrics {
    double bg_mse = 0.0;        // image tasks only
    double fg_hist_dist = 0.0;  // target in M_C vs subject in M_S
    double fg_hist_dist_orig = 0.0;  // target in M_C vs condition's original object (swapping)
};

struct TaskOutput {
    RgbImage target;
    RgbImage subject_reconstruction;
    RgbImage condition_reconstruction;
    BinaryMask editable;
    TaskMetrics metrics;
};

struct RunOverrides {
    /// Replace the editable mask by the whole canvas (full-regeneration baseline).
    bool full_editable = false;
    bool sequential = false;
};

TaskOutput run_prepared(const PreparedTask& prep, const NoisePredictor& model, const ControlSchedule& schedule,
                        const SamplerConfig& sampler, const NoiseSchedule& noise, FusionOrder order = FusionOrder::SubjectInside,
                        bool allow_reverse = false, RunOverrides overrides = {});

TaskMetrics compute_task_metrics(TaskKind task, const RgbImage& target, const BinaryMask& editable,
                                 const RgbImage& subject, const BinaryMask& subject_mask, const RgbImage& condition,
                                 const BinaryMask& edit_region);

/// prepare + run + write target.png, reconstructions and masks to req.output_dir.
TaskOutput run_task(const TaskRequest& req, const NoisePredictor& model, const NoiseSchedule& noise);

}  // namespace mcactrl
