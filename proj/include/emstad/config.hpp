#pragma once

// Experiment configuration: named presets plus per-key JSON overrides.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emstad/digest.hpp"
#include "emstad/em.hpp"
#include "emstad/errors.hpp"
#include "emstad/scene.hpp"
#include "emstad/serialize.hpp"

namespace emstad {

enum class Preset { Convergence, Snapshot, Ccp, Pc, EstimationRms, PdCurve, CfarRho, CfarCnr };
enum class AoaScenario { Matched, Mismatched };

inline const std::vector<std::pair<Preset, std::string>>& preset_names() {
    static const std::vector<std::pair<Preset, std::string>> names = {
        {Preset::Convergence, "convergence"}, {Preset::Snapshot, "snapshot"},
        {Preset::Ccp, "ccp"},                 {Preset::Pc, "pc"},
        {Preset::EstimationRms, "estimation_rms"}, {Preset::PdCurve, "pd_curve"},
        {Preset::CfarRho, "cfar_rho"},        {Preset::CfarCnr, "cfar_cnr"}};
    return names;
}

inline std::string to_string(Preset p) {
    for (const auto& [value, name] : preset_names()) {
        if (value == p) return name;
    }
    return "?";
}

inline std::string to_string(AoaScenario s) { return s == AoaScenario::Matched ? "matched" : "mismatched"; }

inline Preset parse_preset(const std::string& s) {
    for (const auto& [value, name] : preset_names()) {
        if (name == s) return value;
    }
    throw ConfigError("unknown preset '" + s + "'");
}

inline AoaScenario parse_scenario(const std::string& s) {
    if (s == "matched") return AoaScenario::Matched;
    if (s == "mismatched") return AoaScenario::Mismatched;
    throw ConfigError("unknown scenario '" + s + "' (expected matched or mismatched)");
}

struct ExperimentConfig {
    Preset preset = Preset::PdCurve;
    AoaScenario scenario = AoaScenario::Matched;

    std::size_t range_bins = 24;
    InterferenceConfig interference;
    double grid_first = -20.0;
    double grid_step = 2.0;
    double grid_last = 20.0;
    std::vector<TargetSpec> targets;   // sinr_db is replaced by each sinr grid point
    EmConfig em;

    std::vector<double> sinr_db;
    double pfa = 1e-3;
    std::size_t n_trials = 1000;
    std::size_t calibration_trials = 100000;
    std::vector<double> sweep_values;  // cfar presets
    int convergence_iters = 8;         // convergence preset: EM iterations recorded
    std::uint64_t base_seed = 20240917;

    AngleGrid grid() const { return AngleGrid::uniform(grid_first, grid_step, grid_last); }

    /// Scenario with every target at the given SINR.
    Scenario scenario_at(double sinr) const {
        Scenario s;
        s.range_bins = range_bins;
        s.grid = grid();
        s.interference = interference;
        s.targets = targets;
        for (auto& t : s.targets) t.sinr_db = sinr;
        return s;
    }

    /// Trial and calibration budgets divided by 10 (at least 1).
    ExperimentConfig scaled_fast() const {
        ExperimentConfig c = *this;
        c.n_trials = std::max<std::size_t>(1, n_trials / 10);
        c.calibration_trials = std::max<std::size_t>(1, calibration_trials / 10);
        return c;
    }
};

inline std::size_t default_calibration_trials(double pfa) {
    return static_cast<std::size_t>(std::ceil(100.0 / pfa - 1e-9));
}

/// Defaults bundled with each preset.
inline ExperimentConfig preset_defaults(Preset preset, AoaScenario scenario) {
    ExperimentConfig c;
    c.preset = preset;
    c.scenario = scenario;
    c.targets = scenario == AoaScenario::Matched ? matched_targets(0.0) : mismatched_targets(0.0);
    switch (preset) {
    case Preset::Convergence:
        c.sinr_db = {0, 5, 10, 15, 20, 25, 30};
        break;
    case Preset::Snapshot:
        c.sinr_db = {15, 20};
        c.n_trials = 1;
        break;
    case Preset::Ccp:
    case Preset::Pc:
        c.sinr_db = {15, 20};
        break;
    case Preset::EstimationRms:
    case Preset::PdCurve:
        c.sinr_db = {0, 5, 10, 15, 20, 25, 30};
        break;
    case Preset::CfarRho:
        c.sweep_values = {0.5, 0.7, 0.9, 0.95, 0.99};
        c.n_trials = 100000;
        break;
    case Preset::CfarCnr:
        c.sweep_values = {5, 10, 15, 20, 25, 30};
        c.n_trials = 100000;
        break;
    }
    c.calibration_trials = default_calibration_trials(c.pfa);
    return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& t : c.targets) targets.push_back({{"bin", t.range_bin}, {"aoa_deg", t.aoa_deg}});
    return {{"preset", to_string(c.preset)},
            {"scenario", to_string(c.scenario)},
            {"range_bins", c.range_bins},
            {"channels", c.interference.channels},
            {"noise_power", c.interference.noise_power},
            {"cnr_db", c.interference.cnr_db},
            {"rho_c", c.interference.rho_c},
            {"grid", {{"first", c.grid_first}, {"step", c.grid_step}, {"last", c.grid_last}}},
            {"targets", targets},
            {"em", c.em},
            {"sinr_db", c.sinr_db},
            {"pfa", c.pfa},
            {"n_trials", c.n_trials},
            {"calibration_trials", c.calibration_trials},
            {"sweep_values", c.sweep_values},
            {"convergence_iters", c.convergence_iters},
            {"base_seed", c.base_seed}};
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid value for '") + key + "': " + e.what());
    }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

} // namespace detail

inline void validate(const ExperimentConfig& c) {
    try {
        c.interference.validate();
        c.em.validate();
        (void)c.grid();
        (void)c.scenario_at(0.0).generator();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    } catch (const DuplicateBin& e) {
        throw ConfigError(e.what());
    }
    if (c.range_bins < static_cast<std::size_t>(c.interference.channels)) {
        throw ConfigError("range_bins must be >= channels so the sample covariance is invertible");
    }
    if (!(c.pfa > 0.0 && c.pfa < 1.0)) throw ConfigError("pfa must be in (0, 1)");
    if (c.n_trials == 0) throw ConfigError("n_trials must be >= 1");
    if (c.calibration_trials == 0) throw ConfigError("calibration_trials must be >= 1");
    const bool curve = c.preset != Preset::CfarRho && c.preset != Preset::CfarCnr;
    if (curve && c.sinr_db.empty()) throw ConfigError("sinr_db must be nonempty for preset " + to_string(c.preset));
    if (curve && c.targets.empty()) throw ConfigError("preset " + to_string(c.preset) + " needs at least one target");
    if (!curve && c.sweep_values.empty()) throw ConfigError("sweep_values must be nonempty for cfar presets");
    if (c.convergence_iters < 1) throw ConfigError("convergence_iters must be >= 1");
}

/// Resolves a config document: the preset's defaults, then every key present
/// in j. Unknown keys are rejected.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (!j.contains("preset")) throw ConfigError("missing required key 'preset'");
    detail::reject_unknown(j,
                           {"preset", "scenario", "range_bins", "channels", "noise_power", "cnr_db", "rho_c", "grid",
                            "targets", "em", "sinr_db", "pfa", "n_trials", "calibration_trials", "sweep_values",
                            "convergence_iters", "base_seed", "description"},
                           "config");
    std::string preset_name;
    std::string scenario_name = "matched";
    detail::read_key(j, "preset", preset_name);
    detail::read_key(j, "scenario", scenario_name);
    ExperimentConfig c = preset_defaults(parse_preset(preset_name), parse_scenario(scenario_name));

    detail::read_key(j, "range_bins", c.range_bins);
    detail::read_key(j, "channels", c.interference.channels);
    detail::read_key(j, "noise_power", c.interference.noise_power);
    detail::read_key(j, "cnr_db", c.interference.cnr_db);
    detail::read_key(j, "rho_c", c.interference.rho_c);
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        detail::reject_unknown(g, {"first", "step", "last"}, "grid");
        detail::read_key(g, "first", c.grid_first);
        detail::read_key(g, "step", c.grid_step);
        detail::read_key(g, "last", c.grid_last);
    }
    if (j.contains("targets")) {
        c.targets.clear();
        for (const auto& t : j.at("targets")) {
            detail::reject_unknown(t, {"bin", "aoa_deg"}, "targets");
            if (!t.contains("bin") || !t.contains("aoa_deg")) throw ConfigError("each target needs bin and aoa_deg");
            TargetSpec spec;
            detail::read_key(t, "bin", spec.range_bin);
            detail::read_key(t, "aoa_deg", spec.aoa_deg);
            c.targets.push_back(spec);
        }
    }
    if (j.contains("em")) {
        const auto& e = j.at("em");
        detail::reject_unknown(e, {"rho", "max_iters", "delta", "amplitude_sweeps", "jitter"}, "em");
        detail::read_key(e, "rho", c.em.rho);
        detail::read_key(e, "max_iters", c.em.max_iters);
        detail::read_key(e, "delta", c.em.delta);
        detail::read_key(e, "amplitude_sweeps", c.em.amplitude_sweeps);
        detail::read_key(e, "jitter", c.em.jitter);
    }
    detail::read_key(j, "sinr_db", c.sinr_db);
    const bool pfa_given = j.contains("pfa");
    detail::read_key(j, "pfa", c.pfa);
    if (pfa_given && !j.contains("calibration_trials") && c.pfa > 0.0 && c.pfa < 1.0) {
        c.calibration_trials = default_calibration_trials(c.pfa);
    }
    detail::read_key(j, "n_trials", c.n_trials);
    detail::read_key(j, "calibration_trials", c.calibration_trials);
    detail::read_key(j, "sweep_values", c.sweep_values);
    detail::read_key(j, "convergence_iters", c.convergence_iters);
    detail::read_key(j, "base_seed", c.base_seed);
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

inline std::string config_digest(const ExperimentConfig& c) { return json_digest(to_json(c)); }

} // namespace emstad
