#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mcactrl {

/// Step windows are half-open, [start, end), counted from the first (noisiest)
/// denoising step. Layer thresholds are inclusive and use a 16-layer indexing.
struct ControlSchedule {
    int s_gi = 0;
    int e_gi = 20;
    int s_lq = 20;
    int e_lq = 48;
    int layer_gi = 0;
    int layer_lq = 8;
    int total_steps = 50;

    bool operator==(const ControlSchedule&) const = default;
};

/// Layer count the schedule's layer thresholds refer to.
inline constexpr int kScheduleLayers = 16;

enum class EditDecision { GlobalInject, LocalQuery, Standard };
const char* decision_name(EditDecision d);

EditDecision edit_dispatch(int step, int layer, const ControlSchedule& schedule);

/// Position of model layer `layer` (of `model_layers`) on the 16-layer scale.
int schedule_layer(int layer, int model_layers);

struct ScheduleCheck {
    /// Allow the SALQ window to come first (ablation only).
    bool allow_reverse = false;
};

/// Every violated clause, empty when the schedule is valid.
std::vector<std::string> validate_schedule(const ControlSchedule& schedule, ScheduleCheck check = {});

/// "swap-uniform" or "gen-uniform"; nullopt for other names.
std::optional<ControlSchedule> schedule_preset(std::string_view name);

/// Rescales the step windows to `steps` total steps (rounding to nearest).
ControlSchedule rescale_schedule(const ControlSchedule& schedule, int steps);

/// key=value lines with keys s_gi, e_gi, s_lq, e_lq, layer_gi, layer_lq, total_steps.
std::string format_schedule(const ControlSchedule& schedule);
ControlSchedule parse_schedule(std::string_view text);

/// Applies `key=value` pairs separated by commas or newlines on top of `base`.
/// Unknown keys and malformed values throw ConfigError.
ControlSchedule apply_schedule_overrides(ControlSchedule base, std::string_view overrides);

}  // namespace mcactrl
