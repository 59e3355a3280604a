// emstad: run Monte Carlo experiments from JSON configs.
//
// Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical failure,
// 64 bad command line, 1 anything else.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emstad/config.hpp"
#include "emstad/errors.hpp"
#include "emstad/harness.hpp"
#include "emstad/parallel.hpp"

namespace fs = std::filesystem;

namespace {

fs::path config_dir() {
    if (const char* env = std::getenv("EMSTAD_CONFIG_DIR")) return env;
    return EMSTAD_CONFIG_DIR;
}

std::vector<fs::path> bundled_configs() {
    std::vector<fs::path> out;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(config_dir(), ec)) {
        if (entry.path().extension() == ".json") out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// A path that exists wins; otherwise a bare name is looked up among the bundled configs.
fs::path resolve_config(const std::string& arg) {
    if (fs::exists(arg)) return arg;
    const fs::path bundled = config_dir() / (arg + ".json");
    if (fs::exists(bundled)) return bundled;
    throw emstad::IoError("no config file '" + arg + "' and no bundled config of that name");
}

int list_presets() {
    const auto files = bundled_configs();
    if (files.empty()) {
        std::cerr << "no bundled configs in " << config_dir().string() << "\n";
        return 3;
    }
    for (const auto& f : files) {
        const auto cfg = emstad::load_config(f);
        std::cout << f.stem().string() << "  (" << emstad::to_string(cfg.preset) << ", "
                  << emstad::to_string(cfg.scenario) << ", " << cfg.n_trials << " trials)\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"EM-based space-time adaptive detection experiments"};
    app.require_subcommand(1);

    std::string config_arg;
    std::string out_dir = "out";
    std::string cache;
    unsigned workers = emstad::default_workers();
    bool fast = false;
    bool recalibrate = false;
    bool quiet = false;

    auto* run = app.add_subcommand("run", "run one experiment config");
    run->add_option("config", config_arg, "config file, or the name of a bundled config")->required();
    run->add_option("--out", out_dir, "output directory")->capture_default_str();
    run->add_option("--workers", workers, "worker threads (default: $EMSTAD_WORKERS or hardware threads)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    run->add_option("--cache", cache, "threshold cache file (default: OUT/threshold_cache.json)");
    run->add_flag("--fast", fast, "divide trial budgets by 10");
    run->add_flag("--recalibrate", recalibrate, "ignore cached thresholds");
    run->add_flag("-q,--quiet", quiet, "no progress output");

    auto* presets = app.add_subcommand("presets", "list bundled configs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 64;
    }

    try {
        if (presets->parsed()) return list_presets();

        const fs::path path = resolve_config(config_arg);
        const emstad::ExperimentConfig config = emstad::load_config(path);
        emstad::RunOptions opt;
        opt.out_dir = out_dir;
        opt.workers = workers;
        opt.fast = fast;
        opt.recalibrate = recalibrate;
        opt.cache_path = cache.empty() ? fs::path(out_dir) / "threshold_cache.json" : fs::path(cache);
        if (!quiet) opt.log = [](const std::string& line) { std::cerr << line << '\n'; };

        const auto result = emstad::run_experiment(config, opt);
        for (const auto& p : result.outputs) std::cout << (fs::path(out_dir) / p).string() << '\n';
        return 0;
    } catch (const emstad::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const emstad::IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 3;
    } catch (const emstad::Error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
