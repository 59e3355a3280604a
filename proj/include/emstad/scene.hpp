#pragma once

// Array model and synthetic data generation: steering vectors, the
// noise-plus-clutter covariance, SINR-calibrated amplitudes and data matrices.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "emstad/errors.hpp"
#include "emstad/hermitian.hpp"
#include "emstad/rng.hpp"

namespace emstad {

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

/// Strictly increasing grid of candidate angles of arrival, in degrees.
class AngleGrid {
public:
    AngleGrid() : AngleGrid(uniform_values(-20.0, 2.0, 20.0)) {}

    explicit AngleGrid(std::vector<double> degrees) : degrees_(std::move(degrees)) {
        if (degrees_.empty()) {
            throw std::invalid_argument("AngleGrid: empty grid");
        }
        for (std::size_t i = 1; i < degrees_.size(); ++i) {
            if (!(degrees_[i] > degrees_[i - 1])) {
                throw std::invalid_argument("AngleGrid: angles must be strictly increasing");
            }
        }
    }

    /// first, first + step, ..., last (inclusive, last snapped to the step).
    static AngleGrid uniform(double first, double step, double last) {
        return AngleGrid(uniform_values(first, step, last));
    }

    std::size_t size() const { return degrees_.size(); }
    double operator[](std::size_t n) const { return degrees_[n]; }
    const std::vector<double>& degrees() const { return degrees_; }
    double span() const { return degrees_.back() - degrees_.front(); }

    /// Index of the grid angle closest to theta; ties go to the smaller angle.
    std::size_t nearest_index(double theta) const {
        std::size_t best = 0;
        double best_dist = std::abs(degrees_[0] - theta);
        for (std::size_t n = 1; n < degrees_.size(); ++n) {
            const double d = std::abs(degrees_[n] - theta);
            if (d < best_dist) {
                best = n;
                best_dist = d;
            }
        }
        return best;
    }

    bool operator==(const AngleGrid&) const = default;

private:
    static std::vector<double> uniform_values(double first, double step, double last) {
        if (!(step > 0.0) || last < first) {
            throw std::invalid_argument("AngleGrid::uniform: need step > 0 and last >= first");
        }
        const auto count = static_cast<std::size_t>(std::floor((last - first) / step + 1e-9)) + 1;
        std::vector<double> out(count);
        for (std::size_t i = 0; i < count; ++i) {
            out[i] = first + static_cast<double>(i) * step;
        }
        return out;
    }

    std::vector<double> degrees_;
};

/// Half-wavelength ULA response: entry m is exp(i pi m sin(theta)), |v|^2 = N.
inline CVec steering_vector(double theta_deg, int channels) {
    if (channels < 1 || channels > kMaxChannels) {
        throw std::invalid_argument("steering_vector: channel count out of range");
    }
    const double s = std::sin(theta_deg * std::numbers::pi / 180.0);
    CVec v(channels);
    for (int m = 0; m < channels; ++m) {
        v(m) = std::polar(1.0, std::numbers::pi * m * s);
    }
    return v;
}

/// Steering vectors of every grid angle, stacked as the columns of an N x K_theta matrix.
class SteeringTable {
public:
    SteeringTable(AngleGrid grid, int channels) : grid_(std::move(grid)), channels_(channels) {
        vectors_.resize(channels, static_cast<Eigen::Index>(grid_.size()));
        for (std::size_t n = 0; n < grid_.size(); ++n) {
            vectors_.col(static_cast<Eigen::Index>(n)) = steering_vector(grid_[n], channels);
        }
    }

    const AngleGrid& grid() const { return grid_; }
    int channels() const { return channels_; }
    std::size_t size() const { return grid_.size(); }
    const Eigen::MatrixXcd& matrix() const { return vectors_; }
    auto column(std::size_t n) const { return vectors_.col(static_cast<Eigen::Index>(n)); }

private:
    AngleGrid grid_;
    int channels_;
    Eigen::MatrixXcd vectors_;
};

struct InterferenceConfig {
    int channels = 8;
    double noise_power = 1.0;   // sigma_n^2, linear
    double cnr_db = 15.0;       // clutter-to-noise ratio; -inf disables clutter
    double rho_c = 0.9;         // one-lag clutter correlation

    void validate() const {
        if (channels < 2 || channels > kMaxChannels) {
            throw std::invalid_argument("InterferenceConfig: channels must be in 2..16");
        }
        if (!(noise_power > 0.0)) {
            throw std::invalid_argument("InterferenceConfig: noise_power must be > 0");
        }
        if (!(rho_c >= 0.0 && rho_c < 1.0)) {
            throw std::invalid_argument("InterferenceConfig: rho_c must be in [0, 1)");
        }
        if (std::isnan(cnr_db) || cnr_db == std::numeric_limits<double>::infinity()) {
            throw std::invalid_argument("InterferenceConfig: cnr_db must be finite or -inf");
        }
    }
};

/// sigma_n^2 I + sigma_c^2 R_c with R_c[i][j] = rho_c^|i-j|.
inline HermitianPd interference_covariance(const InterferenceConfig& cfg) {
    cfg.validate();
    const double clutter_power = cfg.noise_power * db_to_linear(cfg.cnr_db);
    CMat m(cfg.channels, cfg.channels);
    for (int i = 0; i < cfg.channels; ++i) {
        for (int j = 0; j < cfg.channels; ++j) {
            double v = clutter_power * std::pow(cfg.rho_c, std::abs(i - j));
            if (i == j) {
                v += cfg.noise_power;
            }
            m(i, j) = cd(v, 0.0);
        }
    }
    return HermitianPd(m);
}

/// Complex amplitude with |alpha|^2 v^H M^{-1} v = 10^(sinr_db/10) and arg(alpha) = phase.
inline cd amplitude_from_sinr(double sinr_db, double theta_deg, const HermitianPd& m, double phase) {
    if (sinr_db == -std::numeric_limits<double>::infinity()) {
        return {0.0, 0.0};
    }
    const CVec v = steering_vector(theta_deg, static_cast<int>(m.size()));
    const double gain = m.quad_form(v, v).real();
    return std::polar(std::sqrt(db_to_linear(sinr_db) / gain), phase);
}

/// mean + L w, with L the Cholesky factor of m and w ~ CN(0, I).
inline CVec sample_gaussian(const CVec& mean, const HermitianPd& m, TrialRng& rng) {
    const Eigen::Index n = m.size();
    CVec w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        w(i) = rng.complex_normal();
    }
    CVec out = mean;
    out.noalias() += m.factor().triangularView<Eigen::Lower>() * w;
    return out;
}

struct TargetSpec {
    int range_bin = 1;     // 1-based bin number
    double aoa_deg = 0.0;  // true AoA; need not lie on the grid
    double sinr_db = 20.0;

    bool operator==(const TargetSpec&) const = default;
};

/// Targets of the on-grid three-target scenario (bins 6/13/16, AoAs -16/4/12 deg).
inline std::vector<TargetSpec> matched_targets(double sinr_db) {
    return {{6, -16.0, sinr_db}, {13, 4.0, sinr_db}, {16, 12.0, sinr_db}};
}

/// Same bins, two AoAs placed between grid points (-15/5/12 deg).
inline std::vector<TargetSpec> mismatched_targets(double sinr_db) {
    return {{6, -15.0, sinr_db}, {13, 5.0, sinr_db}, {16, 12.0, sinr_db}};
}

struct Scene {
    DataMatrix z;                               // N x K
    std::vector<TargetSpec> truth;
    std::vector<std::size_t> truth_grid_index;  // nearest grid index per target
    std::vector<cd> amplitudes;                 // per target, as drawn
    HermitianPd covariance;
};

/// Everything needed to draw scenes for one (K, grid, interference, targets)
/// configuration. The covariance factor and target moduli are computed once.
class SceneGenerator {
public:
    SceneGenerator(std::size_t range_bins, AngleGrid grid, InterferenceConfig cfg, std::vector<TargetSpec> targets)
        : range_bins_(range_bins), grid_(std::move(grid)), cfg_(cfg), targets_(std::move(targets)),
          covariance_(interference_covariance(cfg_)) {
        if (range_bins_ == 0) {
            throw std::invalid_argument("SceneGenerator: need at least one range bin");
        }
        std::set<int> seen;
        for (const auto& t : targets_) {
            if (t.range_bin < 1 || static_cast<std::size_t>(t.range_bin) > range_bins_) {
                throw std::invalid_argument("SceneGenerator: target bin " + std::to_string(t.range_bin) +
                                            " outside 1.." + std::to_string(range_bins_));
            }
            if (!seen.insert(t.range_bin).second) {
                throw DuplicateBin("SceneGenerator: two targets in bin " + std::to_string(t.range_bin));
            }
            steering_.push_back(steering_vector(t.aoa_deg, cfg_.channels));
            grid_index_.push_back(grid_.nearest_index(t.aoa_deg));
        }
    }

    const HermitianPd& covariance() const { return covariance_; }
    const AngleGrid& grid() const { return grid_; }
    std::size_t range_bins() const { return range_bins_; }
    const std::vector<TargetSpec>& targets() const { return targets_; }

    /// Draw order: one phase per target (in target order), then the noise of
    /// columns 0..K-1.
    Scene generate(TrialRng& rng) const {
        Scene scene;
        scene.truth = targets_;
        scene.truth_grid_index = grid_index_;
        scene.covariance = covariance_;
        std::vector<CVec> means(range_bins_, CVec::Zero(cfg_.channels));
        for (std::size_t t = 0; t < targets_.size(); ++t) {
            const double phase = rng.phase();
            const cd alpha = amplitude_from_sinr(targets_[t].sinr_db, targets_[t].aoa_deg, covariance_, phase);
            scene.amplitudes.push_back(alpha);
            means[static_cast<std::size_t>(targets_[t].range_bin - 1)] = alpha * steering_[t];
        }
        scene.z.resize(cfg_.channels, static_cast<Eigen::Index>(range_bins_));
        for (std::size_t k = 0; k < range_bins_; ++k) {
            scene.z.col(static_cast<Eigen::Index>(k)) = sample_gaussian(means[k], covariance_, rng);
        }
        return scene;
    }

private:
    std::size_t range_bins_;
    AngleGrid grid_;
    InterferenceConfig cfg_;
    std::vector<TargetSpec> targets_;
    HermitianPd covariance_;
    std::vector<CVec> steering_;
    std::vector<std::size_t> grid_index_;
};

/// Plain description of a simulated scenario.
struct Scenario {
    std::size_t range_bins = 24;
    AngleGrid grid;
    InterferenceConfig interference;
    std::vector<TargetSpec> targets;

    SceneGenerator generator() const { return SceneGenerator(range_bins, grid, interference, targets); }

    /// Same clutter and geometry with every target removed.
    Scenario null_hypothesis() const {
        Scenario s = *this;
        s.targets.clear();
        return s;
    }
};

inline Scene generate_scene(std::size_t range_bins, const AngleGrid& grid, const InterferenceConfig& cfg,
                            const std::vector<TargetSpec>& targets, TrialRng& rng) {
    return SceneGenerator(range_bins, grid, cfg, targets).generate(rng);
}

/// Debug dump: one row per range bin, 2N values interleaved (re, im).
inline void write_scene_csv(std::ostream& os, const Scene& scene) {
    const Eigen::Index n = scene.z.rows();
    os << "bin";
    for (Eigen::Index m = 0; m < n; ++m) {
        os << ",re" << m << ",im" << m;
    }
    os << '\n';
    char buf[64];
    for (Eigen::Index k = 0; k < scene.z.cols(); ++k) {
        os << (k + 1);
        for (Eigen::Index m = 0; m < n; ++m) {
            std::snprintf(buf, sizeof buf, ",%.17g,%.17g", scene.z(m, k).real(), scene.z(m, k).imag());
            os << buf;
        }
        os << '\n';
    }
}

} // namespace emstad
