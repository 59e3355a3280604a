#pragma once

// Performance measures over Monte Carlo batches, and the batch runners that
// produce them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emstad/detect.hpp"
#include "emstad/em.hpp"
#include "emstad/errors.hpp"
#include "emstad/parallel.hpp"
#include "emstad/rng.hpp"
#include "emstad/scene.hpp"

namespace emstad {

struct TrialOutcome {
    std::vector<int> truth_bins;                  // 1-based, in target order
    std::map<int, std::size_t> truth_grid_index;  // bin -> nearest grid index of the true AoA
    Classification est;
    double statistic = 0.0;
    Decision decision = Decision::H0;
    std::vector<double> rel_changes;              // EM relative log-likelihood change per iteration
};

/**
 * Hausdorff distance between two sets of range-bin numbers with d(x, y) = |x - y|.
 * Both empty gives 0; exactly one empty gives range_bins.
 */
inline double hausdorff(const std::vector<int>& x, const std::vector<int>& y, std::size_t range_bins) {
    if (x.empty() && y.empty()) return 0.0;
    if (x.empty() || y.empty()) return static_cast<double>(range_bins);
    const auto directed = [](const std::vector<int>& a, const std::vector<int>& b) {
        int worst = 0;
        for (const int u : a) {
            int best = std::numeric_limits<int>::max();
            for (const int w : b) best = std::min(best, std::abs(u - w));
            worst = std::max(worst, best);
        }
        return worst;
    };
    return static_cast<double>(std::max(directed(x, y), directed(y, x)));
}

/// RMS over trials of the Hausdorff distance between estimated and true bins.
inline double hd_rms(const std::vector<TrialOutcome>& outcomes, std::size_t range_bins) {
    if (outcomes.empty()) throw EmptyBatch("hd_rms: no trials");
    double acc = 0.0;
    for (const auto& o : outcomes) {
        const double h = hausdorff(o.est.bins, o.truth_bins, range_bins);
        acc += h * h;
    }
    return std::sqrt(acc / static_cast<double>(outcomes.size()));
}

/**
 * sqrt(mean_j (1/T) sum_t min_that (theta_t - theta_that)^2). The minimum runs
 * over every AoA estimated in trial j. A trial with no estimate contributes
 * penalty_deg^2 per target.
 */
inline double rmse_aoa(const std::vector<TrialOutcome>& outcomes, const std::vector<double>& truth_angles,
                       double penalty_deg) {
    if (outcomes.empty()) throw EmptyBatch("rmse_aoa: no trials");
    if (truth_angles.empty()) throw std::invalid_argument("rmse_aoa: need at least one true target");
    double acc = 0.0;
    for (const auto& o : outcomes) {
        double trial = 0.0;
        for (const double theta : truth_angles) {
            double best = penalty_deg * penalty_deg;
            if (!o.est.aoa_deg.empty()) {
                best = std::numeric_limits<double>::infinity();
                for (const auto& [bin, est] : o.est.aoa_deg) best = std::min(best, (theta - est) * (theta - est));
            }
            trial += best;
        }
        acc += trial / static_cast<double>(truth_angles.size());
    }
    return std::sqrt(acc / static_cast<double>(outcomes.size()));
}

/// Root mean square of (T-hat - T).
inline double rmse_count(const std::vector<TrialOutcome>& outcomes, std::size_t true_count) {
    if (outcomes.empty()) throw EmptyBatch("rmse_count: no trials");
    double acc = 0.0;
    for (const auto& o : outcomes) {
        const double e = static_cast<double>(o.est.t_hat) - static_cast<double>(true_count);
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(outcomes.size()));
}

/// Percentage of trials in which each bin's label matches the truth.
inline std::vector<double> ccp_per_bin(const std::vector<TrialOutcome>& outcomes, std::size_t range_bins) {
    if (outcomes.empty()) throw EmptyBatch("ccp_per_bin: no trials");
    std::vector<std::size_t> correct(range_bins, 0);
    for (const auto& o : outcomes) {
        if (o.est.s_hat.size() != range_bins) throw std::invalid_argument("ccp_per_bin: label count != range_bins");
        for (std::size_t k = 0; k < range_bins; ++k) {
            const int bin = static_cast<int>(k) + 1;
            const bool truth = std::find(o.truth_bins.begin(), o.truth_bins.end(), bin) != o.truth_bins.end();
            if (o.est.s_hat[k] == (truth ? 1 : 0)) ++correct[k];
        }
    }
    std::vector<double> out(range_bins);
    for (std::size_t k = 0; k < range_bins; ++k) {
        out[k] = 100.0 * static_cast<double>(correct[k]) / static_cast<double>(outcomes.size());
    }
    return out;
}

/// Per true target (in the order of truth_bins): percentage of all trials in
/// which its bin is flagged and its estimated grid index is the nearest grid
/// point to the true AoA.
inline std::vector<double> pc_aoa(const std::vector<TrialOutcome>& outcomes) {
    if (outcomes.empty()) throw EmptyBatch("pc_aoa: no trials");
    const std::vector<int>& bins = outcomes.front().truth_bins;
    std::vector<std::size_t> hits(bins.size(), 0);
    for (const auto& o : outcomes) {
        for (std::size_t t = 0; t < bins.size(); ++t) {
            const auto est = o.est.grid_index.find(bins[t]);
            const auto truth = o.truth_grid_index.find(bins[t]);
            if (est != o.est.grid_index.end() && truth != o.truth_grid_index.end() && est->second == truth->second) {
                ++hits[t];
            }
        }
    }
    std::vector<double> out(bins.size());
    for (std::size_t t = 0; t < bins.size(); ++t) {
        out[t] = 100.0 * static_cast<double>(hits[t]) / static_cast<double>(outcomes.size());
    }
    return out;
}

/// Fraction of H1 decisions: Pd on target data, Pfa on interference-only data.
inline double estimate_rate(const std::vector<TrialOutcome>& outcomes) {
    if (outcomes.empty()) throw EmptyBatch("estimate_rate: no trials");
    const auto hits = std::count_if(outcomes.begin(), outcomes.end(),
                                    [](const TrialOutcome& o) { return o.decision == Decision::H1; });
    return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

struct MetricSummary {
    std::vector<double> ccp_per_bin;     // percent
    std::vector<double> pc_per_target;   // percent
    double pc_mean = 0.0;                // percent, averaged over targets
    double hd_rms = 0.0;
    double rmse_aoa = 0.0;               // degrees
    double rmse_t = 0.0;
    std::optional<double> pd;            // set when the batch had targets and a threshold
    std::optional<double> pfa;           // set when the batch was interference-only with a threshold
    std::size_t n_trials = 0;
};

/// Aggregates a batch drawn from `scenario`. Rates are filled only when
/// `thresholded` is true.
inline MetricSummary summarize(const std::vector<TrialOutcome>& outcomes, const Scenario& scenario, bool thresholded) {
    MetricSummary m;
    m.n_trials = outcomes.size();
    m.ccp_per_bin = ccp_per_bin(outcomes, scenario.range_bins);
    m.hd_rms = hd_rms(outcomes, scenario.range_bins);
    m.rmse_t = rmse_count(outcomes, scenario.targets.size());
    if (!scenario.targets.empty()) {
        m.pc_per_target = pc_aoa(outcomes);
        double s = 0.0;
        for (const double v : m.pc_per_target) s += v;
        m.pc_mean = s / static_cast<double>(m.pc_per_target.size());
        std::vector<double> angles;
        for (const auto& t : scenario.targets) angles.push_back(t.aoa_deg);
        m.rmse_aoa = rmse_aoa(outcomes, angles, scenario.grid.span());
    }
    if (thresholded) {
        (scenario.targets.empty() ? m.pfa : m.pd) = estimate_rate(outcomes);
    }
    return m;
}

/// One Monte Carlo trial: draw a scene, run EM, classify, and (when a
/// threshold is given) decide.
inline TrialOutcome simulate_trial(const SceneGenerator& gen, const SteeringTable& steering, const EmConfig& cfg,
                                   std::optional<double> threshold, TrialRng& rng) {
    const Scene scene = gen.generate(rng);
    const std::vector<EmState> trajectory = run_em(scene.z, steering, cfg);
    TrialOutcome o;
    for (std::size_t t = 0; t < scene.truth.size(); ++t) {
        o.truth_bins.push_back(scene.truth[t].range_bin);
        o.truth_grid_index[scene.truth[t].range_bin] = scene.truth_grid_index[t];
    }
    o.est = classify(trajectory.back().resp, steering.grid());
    o.statistic = lrt_statistic(scene.z, trajectory.back(), steering);
    o.decision = threshold ? decide(o.statistic, *threshold) : Decision::H0;
    for (std::size_t m = 1; m < trajectory.size(); ++m) o.rel_changes.push_back(trajectory[m].rel_change);
    return o;
}

/// n_trials outcomes, trial i seeded by derive_trial_rng(base_seed, i),
/// returned in trial order.
inline std::vector<TrialOutcome> run_batch(const Scenario& scenario, const EmConfig& cfg,
                                           std::optional<double> threshold, std::size_t n_trials,
                                           std::uint64_t base_seed, unsigned workers = default_workers()) {
    const SceneGenerator gen = scenario.generator();
    const SteeringTable steering(scenario.grid, scenario.interference.channels);
    return parallel_map(n_trials, workers, [&](std::size_t i) {
        TrialRng rng = derive_trial_rng(base_seed, i);
        return simulate_trial(gen, steering, cfg, threshold, rng);
    });
}

enum class CfarAxis { RhoC, CnrDb };

struct CfarPoint {
    double value = 0.0;
    std::size_t n_trials = 0;
    std::size_t exceedances = 0;
    double pfa = 0.0;
};

/**
 * False-alarm rate against a fixed threshold while one clutter parameter of
 * the nominal scenario is swept. Every point reuses the same trial seeds
 * (common random numbers), so only the clutter changes between points.
 */
inline std::vector<CfarPoint> cfar_sweep(double threshold, CfarAxis axis, const std::vector<double>& values,
                                         const Scenario& nominal, const EmConfig& cfg, std::size_t n_trials,
                                         std::uint64_t base_seed, unsigned workers = default_workers()) {
    if (n_trials == 0) throw EmptyBatch("cfar_sweep: zero trials per point");
    std::vector<CfarPoint> out;
    for (const double value : values) {
        Scenario s = nominal.null_hypothesis();
        (axis == CfarAxis::RhoC ? s.interference.rho_c : s.interference.cnr_db) = value;
        const std::vector<double> stats = null_statistics(s, cfg, n_trials, base_seed, workers);
        CfarPoint p;
        p.value = value;
        p.n_trials = n_trials;
        p.exceedances = static_cast<std::size_t>(
            std::count_if(stats.begin(), stats.end(), [&](double t) { return decide(t, threshold) == Decision::H1; }));
        p.pfa = static_cast<double>(p.exceedances) / static_cast<double>(n_trials);
        out.push_back(p);
    }
    return out;
}

} // namespace emstad
