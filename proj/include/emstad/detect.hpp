#pragma once

// MAP classification of range bins and angles, the adaptive likelihood-ratio
// detector, and Monte Carlo threshold calibration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emstad/digest.hpp"
#include "emstad/em.hpp"
#include "emstad/errors.hpp"
#include "emstad/parallel.hpp"
#include "emstad/rng.hpp"
#include "emstad/scene.hpp"
#include "emstad/serialize.hpp"

namespace emstad {

enum class Decision { H0, H1 };

/// Range bins are reported as 1-based bin numbers; grid indices are 0-based.
struct Classification {
    std::vector<int> s_hat;                  // one label per bin
    std::vector<int> bins;                   // flagged bins, ascending
    std::map<int, std::size_t> grid_index;   // flagged bin -> estimated grid index
    std::map<int, double> aoa_deg;           // flagged bin -> estimated AoA
    std::size_t t_hat = 0;
};

struct DetectionReport {
    double statistic = 0.0;
    double threshold = 0.0;
    Decision decision = Decision::H0;
    Classification classification;
};

/// argmax_s q_k(s); an exact tie goes to 0 (interference only).
inline std::vector<int> classify_bins(const Responsibilities& resp) {
    std::vector<int> s(static_cast<std::size_t>(resp.bins()));
    for (Eigen::Index k = 0; k < resp.bins(); ++k) {
        s[static_cast<std::size_t>(k)] = resp.q(k, 1) > resp.q(k, 0) ? 1 : 0;
    }
    return s;
}

struct AoaEstimates {
    std::map<int, std::size_t> grid_index;
    std::map<int, double> aoa_deg;
    std::size_t t_hat = 0;
};

/// Per flagged bin, argmax_n r_k(n) with ties to the smallest index.
inline AoaEstimates estimate_aoas(const Responsibilities& resp, const std::vector<int>& bins, const AngleGrid& grid) {
    AoaEstimates out;
    for (const int bin : bins) {
        if (bin < 1 || bin > resp.bins()) {
            throw std::invalid_argument("estimate_aoas: bin " + std::to_string(bin) + " out of range");
        }
        const Eigen::Index k = bin - 1;
        std::size_t best = 0;
        for (Eigen::Index n = 1; n < resp.r.cols(); ++n) {
            if (resp.r(k, n) > resp.r(k, static_cast<Eigen::Index>(best))) {
                best = static_cast<std::size_t>(n);
            }
        }
        out.grid_index[bin] = best;
        out.aoa_deg[bin] = grid[best];
    }
    out.t_hat = bins.size();
    return out;
}

inline Classification classify(const Responsibilities& resp, const AngleGrid& grid) {
    Classification c;
    c.s_hat = classify_bins(resp);
    for (std::size_t k = 0; k < c.s_hat.size(); ++k) {
        if (c.s_hat[k] == 1) c.bins.push_back(static_cast<int>(k) + 1);
    }
    AoaEstimates aoa = estimate_aoas(resp, c.bins, grid);
    c.grid_index = std::move(aoa.grid_index);
    c.aoa_deg = std::move(aoa.aoa_deg);
    c.t_hat = aoa.t_hat;
    return c;
}

/// Z Z^H / K, the ML covariance under the interference-only hypothesis.
inline HermitianPd h0_covariance(const DataMatrix& z) {
    if (z.cols() < z.rows()) {
        throw NotPositiveDefinite("h0_covariance: K < N, sample covariance is singular");
    }
    return HermitianPd(CMat(z * z.adjoint() / static_cast<double>(z.cols())));
}

/// sum_k log CN(z_k; 0, m).
inline double null_loglik(const DataMatrix& z, const HermitianPd& m) {
    const Eigen::MatrixXcd w = m.whiten(z);
    const double per_bin = -static_cast<double>(z.rows()) * std::log(std::numbers::pi) - m.logdet();
    return per_bin * static_cast<double>(z.cols()) - w.squaredNorm();
}

/// Log-LRT: fitted mixture log-likelihood minus the H0 log-likelihood at Z Z^H / K.
inline double lrt_statistic(const DataMatrix& z, const EmState& final_state, const SteeringTable& steering) {
    return log_likelihood(z, final_state, steering) - null_loglik(z, h0_covariance(z));
}

inline Decision decide(double statistic, double threshold) {
    return statistic > threshold ? Decision::H1 : Decision::H0;
}

/// Full pipeline on one data matrix. The classification is filled in whatever
/// the decision.
inline DetectionReport detect(const DataMatrix& z, double threshold, const SteeringTable& steering,
                              const EmConfig& cfg) {
    const std::vector<EmState> trajectory = run_em(z, steering, cfg);
    const EmState& final_state = trajectory.back();
    DetectionReport report;
    report.statistic = lrt_statistic(z, final_state, steering);
    report.threshold = threshold;
    report.decision = decide(report.statistic, threshold);
    report.classification = classify(final_state.resp, steering.grid());
    return report;
}

/// The ceil(pfa * n)-th largest statistic.
inline double threshold_from_statistics(std::vector<double> statistics, double pfa) {
    if (statistics.empty()) {
        throw EmptyBatch("threshold_from_statistics: no statistics");
    }
    if (!(pfa > 0.0 && pfa < 1.0)) {
        throw std::invalid_argument("threshold_from_statistics: pfa must be in (0, 1)");
    }
    const double n = static_cast<double>(statistics.size());
    auto rank = static_cast<std::size_t>(std::ceil(pfa * n * (1.0 - 1e-12)));
    rank = std::clamp<std::size_t>(rank, 1, statistics.size());
    auto nth = statistics.begin() + static_cast<std::ptrdiff_t>(rank - 1);
    std::nth_element(statistics.begin(), nth, statistics.end(), std::greater<>());
    return *nth;
}

/// LRT statistics of n_trials independent interference-only scenes. Trial i
/// draws from derive_trial_rng(base_seed, i).
inline std::vector<double> null_statistics(const Scenario& scenario, const EmConfig& cfg, std::size_t n_trials,
                                           std::uint64_t base_seed, unsigned workers) {
    const SceneGenerator gen = scenario.null_hypothesis().generator();
    const SteeringTable steering(scenario.grid, scenario.interference.channels);
    return parallel_map(n_trials, workers, [&](std::size_t i) {
        TrialRng rng = derive_trial_rng(base_seed, i);
        const Scene scene = gen.generate(rng);
        const auto trajectory = run_em(scene.z, steering, cfg);
        return lrt_statistic(scene.z, trajectory.back(), steering);
    });
}

inline double calibrate_threshold(const Scenario& scenario, const EmConfig& cfg, double pfa, std::size_t n_trials,
                                  std::uint64_t base_seed, unsigned workers = default_workers()) {
    return threshold_from_statistics(null_statistics(scenario, cfg, n_trials, base_seed, workers), pfa);
}

struct ThresholdEntry {
    double pfa = 0.0;
    std::size_t n_trials = 0;
    double eta = 0.0;
    std::uint64_t base_seed = 0;
};

/// JSON file mapping a calibration digest to its threshold.
class ThresholdCache {
public:
    explicit ThresholdCache(std::filesystem::path path) : path_(std::move(path)) {
        if (!std::filesystem::exists(path_)) return;
        std::ifstream in(path_);
        if (!in) throw IoError("cannot read threshold cache " + path_.string());
        try {
            entries_ = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("corrupt threshold cache " + path_.string() + ": " + e.what());
        }
        if (!entries_.is_object()) throw IoError("threshold cache " + path_.string() + " is not a JSON object");
    }

    /// Digest of everything that determines the calibrated threshold.
    static std::string key(const Scenario& scenario, const EmConfig& cfg, double pfa, std::size_t n_trials,
                           std::uint64_t base_seed) {
        const nlohmann::json j = {{"scenario", scenario.null_hypothesis()},
                                  {"em", cfg},
                                  {"pfa", pfa},
                                  {"n_trials", n_trials},
                                  {"base_seed", base_seed}};
        return json_digest(j);
    }

    std::optional<ThresholdEntry> find(const std::string& digest) const {
        const auto it = entries_.find(digest);
        if (it == entries_.end()) return std::nullopt;
        ThresholdEntry e;
        e.pfa = it->at("pfa").get<double>();
        e.n_trials = it->at("n_trials").get<std::size_t>();
        e.eta = it->at("eta").get<double>();
        e.base_seed = it->at("base_seed").get<std::uint64_t>();
        return e;
    }

    void store(const std::string& digest, const ThresholdEntry& e) {
        entries_[digest] = {{"pfa", e.pfa}, {"n_trials", e.n_trials}, {"eta", e.eta}, {"base_seed", e.base_seed}};
    }

    void save() const {
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        std::ofstream out(path_);
        if (!out) throw IoError("cannot write threshold cache " + path_.string());
        out << entries_.dump(2) << '\n';
    }

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    nlohmann::json entries_ = nlohmann::json::object();
};

} // namespace emstad
