#pragma once

// JSON conversions for configuration types and EM trajectories.

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "emstad/em.hpp"
#include "emstad/scene.hpp"

namespace emstad {

inline void to_json(nlohmann::json& j, const TargetSpec& t) {
    j = {{"bin", t.range_bin}, {"aoa_deg", t.aoa_deg}, {"sinr_db", t.sinr_db}};
}

inline void from_json(const nlohmann::json& j, TargetSpec& t) {
    j.at("bin").get_to(t.range_bin);
    j.at("aoa_deg").get_to(t.aoa_deg);
    t.sinr_db = j.value("sinr_db", t.sinr_db);
}

inline void to_json(nlohmann::json& j, const InterferenceConfig& c) {
    j = {{"channels", c.channels}, {"noise_power", c.noise_power}, {"cnr_db", c.cnr_db}, {"rho_c", c.rho_c}};
}

inline void to_json(nlohmann::json& j, const EmConfig& c) {
    j = {{"rho", c.rho},
         {"max_iters", c.max_iters},
         {"delta", c.delta},
         {"amplitude_sweeps", c.amplitude_sweeps},
         {"jitter", c.jitter}};
}

inline void to_json(nlohmann::json& j, const Scenario& s) {
    j = {{"range_bins", s.range_bins},
         {"grid_deg", s.grid.degrees()},
         {"interference", s.interference},
         {"targets", s.targets}};
}

/// Per-iteration log-likelihood, mixing/angle PMFs and relative change.
inline nlohmann::json trajectory_json(const std::vector<EmState>& trajectory) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : trajectory) {
        nlohmann::json row;
        row["iter"] = s.iter;
        row["loglik"] = s.loglik;
        row["pi"] = {s.pi[0], s.pi[1]};
        row["p"] = std::vector<double>(s.p.data(), s.p.data() + s.p.size());
        if (std::isnan(s.rel_change)) {
            row["rel_change"] = nullptr;
        } else {
            row["rel_change"] = s.rel_change;
        }
        out.push_back(std::move(row));
    }
    return out;
}

} // namespace emstad
