#include "mcactrl/control/schedule.hpp"

#include <charconv>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mcactrl/errors.hpp"

namespace mcactrl {

const char* decision_name(EditDecision d) {
    switch (d) {
        case EditDecision::GlobalInject: return "global-inject";
        case EditDecision::LocalQuery: return "local-query";
        case EditDecision::Standard: return "standard";
    }
    return "?";
}

EditDecision edit_dispatch(int step, int layer, const ControlSchedule& s) {
    if (step >= s.s_gi && step < s.e_gi && layer >= s.layer_gi) return EditDecision::GlobalInject;
    if (step >= s.s_lq && step < s.e_lq && layer >= s.layer_lq) return EditDecision::LocalQuery;
    return EditDecision::Standard;
}

int schedule_layer(int layer, int model_layers) {
    if (model_layers <= 0 || layer < 0 || layer >= model_layers) {
        throw std::invalid_argument("layer " + std::to_string(layer) + " outside model of " +
                                    std::to_string(model_layers) + " layers");
    }
    return layer * kScheduleLayers / model_layers;
}

std::vector<std::string> validate_schedule(const ControlSchedule& s, ScheduleCheck check) {
    std::vector<std::string> v;
    if (s.total_steps < 1) v.push_back("total_steps >= 1");
    if (s.s_gi < 0) v.push_back("s_gi >= 0");
    if (s.s_gi > s.e_gi) v.push_back("s_gi <= e_gi");
    if (s.s_lq > s.e_lq) v.push_back("s_lq <= e_lq");
    if (s.e_gi > s.total_steps) v.push_back("e_gi <= total_steps");
    if (s.e_lq > s.total_steps) v.push_back("e_lq <= total_steps");
    if (s.s_lq < 0) v.push_back("s_lq >= 0");
    if (s.layer_gi < 0 || s.layer_gi > kScheduleLayers) v.push_back("0 <= layer_gi <= 16");
    if (s.layer_lq < 0 || s.layer_lq > kScheduleLayers) v.push_back("0 <= layer_lq <= 16");
    if (check.allow_reverse) {
        // Either order is fine as long as the windows abut without overlapping.
        if (s.e_gi != s.s_lq && s.e_lq != s.s_gi) v.push_back("windows must abut (e_gi = s_lq or e_lq = s_gi)");
    } else if (s.e_gi != s.s_lq) {
        v.push_back("e_gi = s_lq");
    }
    const bool overlap = s.s_gi < s.e_gi && s.s_lq < s.e_lq && s.s_gi < s.e_lq && s.s_lq < s.e_gi;
    if (overlap) v.push_back("SAGI and SALQ windows are disjoint");
    return v;
}

std::optional<ControlSchedule> schedule_preset(std::string_view name) {
    if (name == "swap-uniform") return ControlSchedule{0, 20, 20, 48, 0, 8, 50};
    if (name == "gen-uniform") return ControlSchedule{0, 35, 35, 48, 0, 0, 50};
    return std::nullopt;
}

ControlSchedule rescale_schedule(const ControlSchedule& s, int steps) {
    if (steps < 1 || s.total_steps < 1) throw std::invalid_argument("schedule step counts must be positive");
    if (steps == s.total_steps) return s;
    auto scale = [&](int v) { return static_cast<int>((static_cast<int64_t>(v) * steps * 2 + s.total_steps) / (2 * s.total_steps)); };
    ControlSchedule out = s;
    out.s_gi = scale(s.s_gi);
    out.e_gi = scale(s.e_gi);
    out.s_lq = scale(s.s_lq);
    out.e_lq = scale(s.e_lq);
    out.total_steps = steps;
    return out;
}

std::string format_schedule(const ControlSchedule& s) {
    std::ostringstream out;
    out << "s_gi=" << s.s_gi << "\ne_gi=" << s.e_gi << "\ns_lq=" << s.s_lq << "\ne_lq=" << s.e_lq
        << "\nlayer_gi=" << s.layer_gi << "\nlayer_lq=" << s.layer_lq << "\ntotal_steps=" << s.total_steps << '\n';
    return out.str();
}

namespace {

int* field(ControlSchedule& s, std::string_view key) {
    if (key == "s_gi") return &s.s_gi;
    if (key == "e_gi") return &s.e_gi;
    if (key == "s_lq") return &s.s_lq;
    if (key == "e_lq") return &s.e_lq;
    if (key == "layer_gi") return &s.layer_gi;
    if (key == "layer_lq") return &s.layer_lq;
    if (key == "total_steps") return &s.total_steps;
    return nullptr;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

ControlSchedule apply_pairs(ControlSchedule s, std::string_view text, std::set<std::string>* seen) {
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t end = text.find_first_of(",\n", pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view item = trim(text.substr(pos, end - pos));
        pos = end + 1;
        if (item.empty() || item.front() == '#') continue;
        const size_t eq = item.find('=');
        if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(item) + "'");
        const std::string key(trim(item.substr(0, eq)));
        const std::string_view val = trim(item.substr(eq + 1));
        int* dst = field(s, key);
        if (!dst) throw ConfigError("unknown schedule key '" + key + "'");
        int parsed = 0;
        const auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), parsed);
        if (ec != std::errc{} || ptr != val.data() + val.size()) {
            throw ConfigError("schedule key '" + key + "' needs an integer, got '" + std::string(val) + "'");
        }
        *dst = parsed;
        if (seen) seen->insert(key);
    }
    return s;
}

}  // namespace

ControlSchedule parse_schedule(std::string_view text) {
    std::set<std::string> seen;
    ControlSchedule s = apply_pairs(ControlSchedule{}, text, &seen);
    for (const char* key : {"s_gi", "e_gi", "s_lq", "e_lq", "layer_gi", "layer_lq", "total_steps"}) {
        if (!seen.count(key)) throw ConfigError("schedule is missing key '" + std::string(key) + "'");
    }
    return s;
}

ControlSchedule apply_schedule_overrides(ControlSchedule base, std::string_view overrides) {
    if (trim(overrides) == "-") return base;
    return apply_pairs(base, overrides, nullptr);
}

}  // namespace mcactrl
