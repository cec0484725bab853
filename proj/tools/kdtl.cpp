// kdtl: simulate, fit, calibrate and compare deflection-interferometry runs.
// Log level comes from SPDLOG_LEVEL (e.g. SPDLOG_LEVEL=debug).

#include <algorithm>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kdtl/io/commands.hpp"

namespace {

using namespace kdtl::io;

int run(CLI::App& app, int argc, char** argv) {
    Overrides ov;
    ov.threads = std::max(1u, std::thread::hardware_concurrency());
    std::string config;
    std::string out_dir = ".";
    std::string scan_dir;
    std::uint64_t seed = 0;
    std::string vdist_file;
    double known_chi = 0.0;
    std::vector<std::string> estimates;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "experiment config (JSON)");
        sub->add_option("--out-dir", out_dir, "output directory");
        sub->add_option("--vdist-file", vdist_file, "velocity histogram CSV (velocity_m_per_s,weight)");
    };

    auto* simulate = app.add_subcommand("simulate", "synthesise scan CSVs and a manifest");
    add_common(simulate);
    simulate->add_option("--seed", seed, "override master_seed");

    auto* fit = app.add_subcommand("fit", "estimate chi from a scan directory");
    add_common(fit);
    fit->add_option("--scan-dir", scan_dir, "directory written by simulate")->required();
    fit->add_option("--exclude-voltage", ov.exclude_voltages, "voltage in V to leave out of the mean (repeatable)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

    auto* calibrate = app.add_subcommand("calibrate", "fit the deflector geometry factor K");
    add_common(calibrate);
    calibrate->add_option("--scan-dir", scan_dir, "directory written by simulate")->required();
    calibrate->add_option("--known-chi", known_chi, "susceptibility of the calibrant [A^3]")->required();

    auto* report = app.add_subcommand("report", "compare two or more estimates");
    report->add_option("estimates", estimates, "estimate JSON files")->required()->expected(2, -1);
    report->add_option("--out-dir", out_dir, "output directory");

    app.require_subcommand(1);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? exit_ok : exit_validation;
    }

    if (simulate->count("--seed")) ov.seed = seed;
    if (!vdist_file.empty()) ov.vdist_file = vdist_file;
    auto config_or = [&](const std::string& dir) {
        if (!config.empty()) return config;
        return (fs::path(dir) / config_copy_name).string();
    };

    if (simulate->parsed()) {
        if (config.empty()) throw kdtl::ValidationError("simulate: --config is required");
        const auto r = cmd_simulate(config, out_dir, ov);
        spdlog::info("wrote {} scan files and {} to {}", r.files.size(), manifest_name, out_dir);
    } else if (fit->parsed()) {
        const auto r = cmd_fit(scan_dir, config_or(scan_dir), out_dir, ov);
        for (const auto& w : r.estimate.at("warnings")) spdlog::warn("{}", w.get<std::string>());
        spdlog::info("chi = {:.4f} +- {:.4f} A^3", r.estimate.at("weighted_mean_chi_A3").get<double>(),
                     r.estimate.at("weighted_mean_sigma_A3").get<double>());
    } else if (calibrate->parsed()) {
        const auto r = cmd_calibrate(scan_dir, known_chi, config_or(scan_dir), out_dir, ov);
        for (const auto& n : r.calibration.notes) spdlog::info("{}", n);
        if (!r.calibration.consistent) spdlog::warn("calibration flagged inconsistent");
    } else if (report->parsed()) {
        const auto r = cmd_report(estimates, out_dir);
        for (const auto& p : r.at("pairs"))
            spdlog::info("{} vs {}: {:.2f} sigma", p.at("a").get<std::string>(), p.at("b").get<std::string>(),
                         p.at("separation_sigma").get<double>());
    }
    return exit_ok;
}

} // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("kdtl"));
    spdlog::cfg::load_env_levels();
    CLI::App app{"KDTL deflection interferometry toolkit"};
    try {
        return run(app, argc, argv);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return exit_code_for(e);
    }
}
