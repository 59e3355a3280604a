#pragma once

// Experiment runner behind `emstad run`: resolves seeds, runs the preset's
// batches and writes manifest.json plus one CSV per curve.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emstad/config.hpp"
#include "emstad/detect.hpp"
#include "emstad/metrics.hpp"
#include "emstad/parallel.hpp"
#include "emstad/rng.hpp"
#include "emstad/serialize.hpp"
#include "emstad/version.hpp"

namespace emstad {

// Seed streams. Test batches and threshold calibration never share trial RNGs.
enum class SeedStream : std::uint64_t { Trials = 0x7452'4941'4c53ULL, Calibration = 0x4341'4c49'4252ULL };

inline std::uint64_t stream_seed(std::uint64_t base_seed, SeedStream stream) {
    return splitmix64(base_seed ^ static_cast<std::uint64_t>(stream));
}

inline constexpr const char* kSeedRule =
    "stream = splitmix64(base_seed ^ tag), tag in {trials, calibration}; "
    "trial i uses mt19937_64(splitmix64(stream ^ splitmix64(i + 0x9e3779b97f4a7c15))); "
    "every SINR or sweep point reuses the same trial indices";

// Frozen CSV headers. Changing one of these is a schema break.
namespace csv_schema {
inline constexpr const char* convergence = "sinr_db,m,mean_rel_change,median_rel_change,max_rel_change,n_trials";
inline constexpr const char* snapshot = "sinr_db,bin,class,aoa_deg,true_class,true_aoa_deg";
inline constexpr const char* ccp = "sinr_db,bin,is_target,ccp_percent";
inline constexpr const char* pc = "sinr_db,target,bin,true_aoa_deg,nearest_grid_deg,pc_percent";
inline constexpr const char* estimation = "sinr_db,n_trials,hd_rms,rmse_aoa_deg,rmse_t";
inline constexpr const char* metrics =
    "sinr_db,n_trials,ccp_min_percent,pc_mean_percent,hd_rms,rmse_aoa_deg,rmse_t,pd";
inline constexpr const char* pd = "sinr_db,n_trials,detections,pd,eta";
inline constexpr const char* cfar = "axis,value,n_trials,exceedances,pfa,eta";
} // namespace csv_schema

/// Shortest round-trip-stable text for CSV cells.
inline std::string fmt_num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

struct RunOptions {
    std::filesystem::path out_dir = "out";
    unsigned workers = default_workers();
    bool fast = false;
    bool recalibrate = false;
    std::filesystem::path cache_path = "threshold_cache.json";
    std::function<void(const std::string&)> log;  // progress lines, may be empty
};

struct RunResult {
    nlohmann::json manifest;
    std::vector<std::filesystem::path> outputs;  // relative to out_dir
    std::optional<double> eta;
};

namespace detail {

inline std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

class OutputDir {
public:
    explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
        std::error_code ec;
        std::filesystem::create_directories(root_, ec);
        if (ec) throw IoError("cannot create output directory " + root_.string() + ": " + ec.message());
    }

    void write(const std::string& name, const std::string& body) {
        const auto path = root_ / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        out << body;
        out.close();
        if (!out) throw IoError("write failed for " + path.string());
        if (std::find(names_.begin(), names_.end(), name) == names_.end()) names_.emplace_back(name);
    }

    const std::vector<std::filesystem::path>& names() const { return names_; }

private:
    std::filesystem::path root_;
    std::vector<std::filesystem::path> names_;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    return 0.5 * (hi + *std::max_element(v.begin(), mid));
}

inline nlohmann::json summary_json(double sinr, const MetricSummary& m) {
    nlohmann::json j = {{"sinr_db", sinr},         {"n_trials", m.n_trials}, {"ccp_per_bin", m.ccp_per_bin},
                        {"pc_per_target", m.pc_per_target}, {"pc_mean", m.pc_mean}, {"hd_rms", m.hd_rms},
                        {"rmse_aoa_deg", m.rmse_aoa}, {"rmse_t", m.rmse_t}};
    j["pd"] = m.pd ? nlohmann::json(*m.pd) : nlohmann::json(nullptr);
    j["pfa"] = m.pfa ? nlohmann::json(*m.pfa) : nlohmann::json(nullptr);
    return j;
}

inline std::string metrics_row(double sinr, const MetricSummary& m) {
    const double ccp_min = m.ccp_per_bin.empty() ? 0.0 : *std::min_element(m.ccp_per_bin.begin(), m.ccp_per_bin.end());
    return fmt_num(sinr) + ',' + std::to_string(m.n_trials) + ',' + fmt_num(ccp_min) + ',' + fmt_num(m.pc_mean) + ',' +
           fmt_num(m.hd_rms) + ',' + fmt_num(m.rmse_aoa) + ',' + fmt_num(m.rmse_t) + ',' + (m.pd ? fmt_num(*m.pd) : "") +
           '\n';
}

inline void say(const RunOptions& opt, const std::string& line) {
    if (opt.log) opt.log(line);
}

} // namespace detail

/// Threshold for the config's nominal interference, from the cache unless
/// `recalibrate` is set or no entry matches. Fresh values are written back.
inline double resolve_threshold(const ExperimentConfig& c, const RunOptions& opt, bool* from_cache = nullptr) {
    const Scenario nominal = c.scenario_at(0.0).null_hypothesis();
    const std::uint64_t seed = stream_seed(c.base_seed, SeedStream::Calibration);
    ThresholdCache cache(opt.cache_path);
    const std::string key = ThresholdCache::key(nominal, c.em, c.pfa, c.calibration_trials, seed);
    if (!opt.recalibrate) {
        if (const auto hit = cache.find(key)) {
            if (from_cache) *from_cache = true;
            detail::say(opt, "threshold " + fmt_num(hit->eta) + " from cache " + opt.cache_path.string());
            return hit->eta;
        }
    }
    detail::say(opt, "calibrating threshold: pfa " + fmt_num(c.pfa) + ", " + std::to_string(c.calibration_trials) +
                         " interference-only trials");
    const double eta = calibrate_threshold(nominal, c.em, c.pfa, c.calibration_trials, seed, opt.workers);
    cache.store(key, {c.pfa, c.calibration_trials, eta, seed});
    cache.save();
    if (from_cache) *from_cache = false;
    return eta;
}

namespace detail {

inline void run_convergence(const ExperimentConfig& c, const RunOptions& opt, OutputDir& out) {
    EmConfig em = c.em;
    em.max_iters = c.convergence_iters;
    em.delta = std::numeric_limits<double>::min();  // run every iteration; exact ties stop and read as 0
    const std::uint64_t seed = stream_seed(c.base_seed, SeedStream::Trials);
    std::ostringstream csv;
    csv << csv_schema::convergence << '\n';
    for (const double sinr : c.sinr_db) {
        say(opt, "convergence: SINR " + fmt_num(sinr) + " dB");
        const auto outcomes = run_batch(c.scenario_at(sinr), em, std::nullopt, c.n_trials, seed, opt.workers);
        for (int m = 1; m <= c.convergence_iters; ++m) {
            std::vector<double> values;
            values.reserve(outcomes.size());
            for (const auto& o : outcomes) {
                const auto idx = static_cast<std::size_t>(m - 1);
                values.push_back(idx < o.rel_changes.size() ? o.rel_changes[idx] : 0.0);
            }
            double sum = 0.0;
            for (const double v : values) sum += v;
            const double mx = *std::max_element(values.begin(), values.end());
            csv << fmt_num(sinr) << ',' << m << ',' << fmt_num(sum / static_cast<double>(values.size())) << ','
                << fmt_num(median(values)) << ',' << fmt_num(mx) << ',' << outcomes.size() << '\n';
        }
    }
    out.write("convergence.csv", csv.str());
}

inline void run_snapshot(const ExperimentConfig& c, const RunOptions& opt, OutputDir& out) {
    const std::uint64_t seed = stream_seed(c.base_seed, SeedStream::Trials);
    std::ostringstream csv;
    csv << csv_schema::snapshot << '\n';
    nlohmann::json trajectories = nlohmann::json::object();
    for (const double sinr : c.sinr_db) {
        say(opt, "snapshot: SINR " + fmt_num(sinr) + " dB");
        const Scenario s = c.scenario_at(sinr);
        const SteeringTable steering(s.grid, s.interference.channels);
        TrialRng rng = derive_trial_rng(seed, 0);
        const Scene scene = s.generator().generate(rng);
        const auto traj = run_em(scene.z, steering, c.em);
        const Classification cls = classify(traj.back().resp, s.grid);
        for (std::size_t k = 0; k < s.range_bins; ++k) {
            const int bin = static_cast<int>(k) + 1;
            const auto truth = std::find_if(s.targets.begin(), s.targets.end(),
                                            [&](const TargetSpec& t) { return t.range_bin == bin; });
            const auto est = cls.aoa_deg.find(bin);
            // class 1: interference only, class 2: target present
            csv << fmt_num(sinr) << ',' << bin << ',' << (cls.s_hat[k] + 1) << ','
                << (est != cls.aoa_deg.end() ? fmt_num(est->second) : "") << ','
                << (truth != s.targets.end() ? 2 : 1) << ','
                << (truth != s.targets.end() ? fmt_num(truth->aoa_deg) : "") << '\n';
        }
        trajectories[fmt_num(sinr)] = trajectory_json(traj);
        std::ostringstream scene_csv;
        write_scene_csv(scene_csv, scene);
        out.write("scene_sinr" + fmt_num(sinr) + ".csv", scene_csv.str());
    }
    out.write("snapshot.csv", csv.str());
    out.write("trajectory.json", trajectories.dump(2) + '\n');
}

// ccp, pc, estimation_rms and pd_curve share one batch per SINR point.
inline std::optional<double> run_curves(const ExperimentConfig& c, const RunOptions& opt, OutputDir& out) {
    std::optional<double> eta;
    if (c.preset == Preset::PdCurve) eta = resolve_threshold(c, opt);
    const std::uint64_t seed = stream_seed(c.base_seed, SeedStream::Trials);

    std::ostringstream metrics_csv, ccp_csv, pc_csv, est_csv, pd_csv;
    metrics_csv << csv_schema::metrics << '\n';
    ccp_csv << csv_schema::ccp << '\n';
    pc_csv << csv_schema::pc << '\n';
    est_csv << csv_schema::estimation << '\n';
    pd_csv << csv_schema::pd << '\n';
    nlohmann::json metrics_json = nlohmann::json::array();
    const AngleGrid grid = c.grid();

    for (const double sinr : c.sinr_db) {
        say(opt, to_string(c.preset) + ": SINR " + fmt_num(sinr) + " dB, " + std::to_string(c.n_trials) + " trials");
        const Scenario s = c.scenario_at(sinr);
        const auto outcomes = run_batch(s, c.em, eta, c.n_trials, seed, opt.workers);
        const MetricSummary m = summarize(outcomes, s, eta.has_value());
        metrics_csv << metrics_row(sinr, m);
        metrics_json.push_back(summary_json(sinr, m));
        for (std::size_t k = 0; k < s.range_bins; ++k) {
            const int bin = static_cast<int>(k) + 1;
            const bool is_target = std::any_of(s.targets.begin(), s.targets.end(),
                                               [&](const TargetSpec& t) { return t.range_bin == bin; });
            ccp_csv << fmt_num(sinr) << ',' << bin << ',' << (is_target ? 1 : 0) << ',' << fmt_num(m.ccp_per_bin[k])
                    << '\n';
        }
        for (std::size_t t = 0; t < s.targets.size(); ++t) {
            pc_csv << fmt_num(sinr) << ',' << (t + 1) << ',' << s.targets[t].range_bin << ','
                   << fmt_num(s.targets[t].aoa_deg) << ',' << fmt_num(grid[grid.nearest_index(s.targets[t].aoa_deg)])
                   << ',' << fmt_num(m.pc_per_target[t]) << '\n';
        }
        est_csv << fmt_num(sinr) << ',' << m.n_trials << ',' << fmt_num(m.hd_rms) << ',' << fmt_num(m.rmse_aoa) << ','
                << fmt_num(m.rmse_t) << '\n';
        if (eta) {
            const auto hits = std::count_if(outcomes.begin(), outcomes.end(),
                                            [](const TrialOutcome& o) { return o.decision == Decision::H1; });
            pd_csv << fmt_num(sinr) << ',' << outcomes.size() << ',' << hits << ',' << fmt_num(*m.pd) << ','
                   << fmt_num(*eta) << '\n';
        }
    }

    switch (c.preset) {
    case Preset::Ccp: out.write("ccp.csv", ccp_csv.str()); break;
    case Preset::Pc: out.write("pc.csv", pc_csv.str()); break;
    case Preset::EstimationRms: out.write("estimation.csv", est_csv.str()); break;
    case Preset::PdCurve: out.write("pd.csv", pd_csv.str()); break;
    default: break;
    }
    out.write("metrics.csv", metrics_csv.str());
    out.write("metrics.json", metrics_json.dump(2) + '\n');
    return eta;
}

inline double run_cfar(const ExperimentConfig& c, const RunOptions& opt, OutputDir& out) {
    const double eta = resolve_threshold(c, opt);
    const bool rho = c.preset == Preset::CfarRho;
    const Scenario nominal = c.scenario_at(0.0).null_hypothesis();
    const std::uint64_t seed = stream_seed(c.base_seed, SeedStream::Trials);
    say(opt, std::string("cfar sweep over ") + (rho ? "rho_c" : "cnr_db") + ", " + std::to_string(c.n_trials) +
                 " trials per point");
    const auto points =
        cfar_sweep(eta, rho ? CfarAxis::RhoC : CfarAxis::CnrDb, c.sweep_values, nominal, c.em, c.n_trials, seed,
                   opt.workers);
    std::ostringstream csv;
    csv << csv_schema::cfar << '\n';
    for (const auto& p : points) {
        csv << (rho ? "rho_c" : "cnr_db") << ',' << fmt_num(p.value) << ',' << p.n_trials << ',' << p.exceedances
            << ',' << fmt_num(p.pfa) << ',' << fmt_num(eta) << '\n';
    }
    out.write("cfar.csv", csv.str());
    return eta;
}

} // namespace detail

/// Runs one experiment. With opt.fast the trial budgets are divided by 10
/// before anything else, so the digest describes what actually ran.
inline RunResult run_experiment(const ExperimentConfig& config, const RunOptions& opt) {
    const ExperimentConfig c = opt.fast ? config.scaled_fast() : config;
    validate(c);
    const std::string started = detail::utc_now();
    detail::OutputDir out(opt.out_dir);
    RunResult result;

    switch (c.preset) {
    case Preset::Convergence: detail::run_convergence(c, opt, out); break;
    case Preset::Snapshot: detail::run_snapshot(c, opt, out); break;
    case Preset::Ccp:
    case Preset::Pc:
    case Preset::EstimationRms:
    case Preset::PdCurve: result.eta = detail::run_curves(c, opt, out); break;
    case Preset::CfarRho:
    case Preset::CfarCnr: result.eta = detail::run_cfar(c, opt, out); break;
    }

    std::vector<std::string> outputs;
    for (const auto& p : out.names()) outputs.push_back(p.string());
    outputs.emplace_back("manifest.json");
    nlohmann::json m = {{"config_digest", config_digest(c)},
                        {"config", to_json(c)},
                        {"code_version", kVersion},
                        {"started_utc", started},
                        {"finished_utc", detail::utc_now()},
                        {"outputs", outputs},
                        {"seed_rule", kSeedRule},
                        {"trial_stream_seed", stream_seed(c.base_seed, SeedStream::Trials)},
                        {"calibration_stream_seed", stream_seed(c.base_seed, SeedStream::Calibration)},
                        {"workers", opt.workers},
                        {"fast", opt.fast}};
    if (result.eta) {
        m["threshold"] = {{"eta", *result.eta}, {"cache", opt.cache_path.string()}};
    }
    out.write("manifest.json", m.dump(2) + '\n');
    result.manifest = std::move(m);
    result.outputs = out.names();
    return result;
}

} // namespace emstad
