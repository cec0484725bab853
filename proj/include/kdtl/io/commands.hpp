#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdtl/beamline.hpp"
#include "kdtl/error.hpp"
#include "kdtl/extraction.hpp"
#include "kdtl/io/config.hpp"
#include "kdtl/io/scan_csv.hpp"
#include "kdtl/units.hpp"
#include "kdtl/vanvleck.hpp"

namespace kdtl::io {

namespace fs = std::filesystem;

inline constexpr const char* manifest_format = "kdtl-manifest-1";
inline constexpr const char* estimate_format = "kdtl-estimate-1";
inline constexpr const char* deflector_format = "kdtl-deflector-1";
inline constexpr const char* report_format = "kdtl-report-1";
inline constexpr const char* manifest_name = "manifest.json";
inline constexpr const char* config_copy_name = "config.json";
inline constexpr const char* estimate_name = "estimate.json";
inline constexpr const char* chi_table_name = "chi_per_voltage.csv";
inline constexpr const char* deflector_name = "deflector.json";
inline constexpr const char* report_name = "report.json";

enum ExitCode : int { exit_ok = 0, exit_validation = 2, exit_io = 3, exit_numerical = 4 };

/// Maps the library error hierarchy onto the stable CLI exit codes.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const DomainError*>(&e)) return exit_validation;
    if (dynamic_cast<const IoError*>(&e)) return exit_io;
    if (dynamic_cast<const NumericalError*>(&e)) return exit_numerical;
    return exit_numerical;
}

/// Command-line overrides applied on top of a loaded config.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::vector<double> exclude_voltages;  // V
    std::optional<std::string> vdist_file;
    unsigned threads = 1;
};

namespace detail {

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

inline std::string voltage_tag(double voltage) {
    std::string s = format_double(voltage);
    for (char& c : s)
        if (c == '.') c = 'p';
    return s + "V";
}

inline std::string scan_file_name(std::size_t index, double voltage, bool is_reference) {
    char idx[16];
    std::snprintf(idx, sizeof idx, "%02zu", index);
    return std::string("scan_") + idx + "_" + voltage_tag(voltage) + (is_reference ? "_reference.csv" : "_signal.csv");
}

inline void write_json(const fs::path& path, const json& j) { write_text_file(path.string(), j.dump(2) + "\n"); }

inline json velocity_json(const VelocityDistribution& v) {
    if (v.kind == VelocityKind::gaussian)
        return {{"kind", "gaussian"}, {"v_mean_m_per_s", v.v_mean}, {"fwhm_fraction", v.fwhm_fraction}};
    json bins = json::array();
    for (const auto& b : v.bins) bins.push_back({{"velocity_m_per_s", b.velocity}, {"weight", b.weight}});
    return {{"kind", "histogram"}, {"bins", bins}};
}

inline double nonneg_number(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j.at(key).is_number()) throw ValidationError(where + "." + key + ": expected a number");
    return j.at(key).get<double>();
}

} // namespace detail

/// Loads a config and applies overrides. The returned config's `source`
/// reflects the effective settings, so a saved copy reproduces the run.
inline ExperimentConfig effective_config(const std::string& config_path, const Overrides& ov) {
    json j = read_json_file(config_path);
    if (ov.seed) j["master_seed"] = *ov.seed;
    if (ov.vdist_file) j["velocity"] = detail::velocity_json(read_vdist_csv(*ov.vdist_file));
    if (!ov.exclude_voltages.empty()) {
        if (!j.contains("analysis")) j["analysis"] = json::object();
        json& list = j["analysis"]["exclude_voltages_kV"];
        if (!list.is_array()) list = json::array();
        for (double u : ov.exclude_voltages) list.push_back(units::V_to_kV(u));
    }
    return parse_config(j);
}

struct SimulateResult {
    json manifest;
    std::vector<std::string> files;
};

/// Writes one CSV per (signal, reference) pair, the effective config and a
/// manifest. Output bytes depend only on the effective config.
inline SimulateResult cmd_simulate(const std::string& config_path, const std::string& out_dir,
                                   const Overrides& ov = {}) {
    const ExperimentConfig cfg = effective_config(config_path, ov);
    const fs::path dir(out_dir);
    detail::ensure_dir(dir);
    const auto pairs =
        simulate_staircase(cfg.molecule, cfg.gratings, cfg.deflector, cfg.vdist, cfg.staircase(ov.threads));

    SimulateResult out;
    json entries = json::array();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const std::string sig = detail::scan_file_name(i, pairs[i].signal.voltage, false);
        const std::string ref = detail::scan_file_name(i, pairs[i].signal.voltage, true);
        write_text_file((dir / sig).string(), scan_to_csv(pairs[i].signal));
        write_text_file((dir / ref).string(), scan_to_csv(pairs[i].reference));
        out.files.push_back(sig);
        out.files.push_back(ref);
        entries.push_back({{"index", i},
                           {"voltage_V", pairs[i].signal.voltage},
                           {"signal", {{"file", sig}, {"seed", pairs[i].signal.seed}}},
                           {"reference", {{"file", ref}, {"seed", pairs[i].reference.seed}}}});
    }
    detail::write_json(dir / config_copy_name, cfg.source);
    out.manifest = {{"format", manifest_format},
                    {"config_hash", config_hash(cfg.source)},
                    {"config_file", config_copy_name},
                    {"master_seed", cfg.master_seed},
                    {"molecule", cfg.molecule.name},
                    {"ref_voltage_V", cfg.ref_voltage},
                    {"scan_points", cfg.scan_count},
                    {"noiseless", cfg.noiseless},
                    {"pairs", entries},
                    {"files", out.files}};
    detail::write_json(dir / manifest_name, out.manifest);
    return out;
}

/// Reads the scan pairs listed in a manifest. A pair whose reference scan
/// is absent is a validation error, not an I/O one.
inline std::vector<ScanPair> load_scan_pairs(const std::string& scan_dir, json* manifest_out = nullptr) {
    const fs::path dir(scan_dir);
    const json manifest = read_json_file((dir / manifest_name).string());
    if (!manifest.is_object() || manifest.value("format", "") != manifest_format)
        throw ValidationError((dir / manifest_name).string() + ": not a " + manifest_format + " manifest");
    if (!manifest.contains("pairs") || !manifest.at("pairs").is_array())
        throw ValidationError((dir / manifest_name).string() + ": missing pairs");

    std::vector<ScanPair> pairs;
    for (const auto& entry : manifest.at("pairs")) {
        const double voltage = detail::nonneg_number(entry, "voltage_V", "manifest.pairs");
        auto file_of = [&](const char* role) -> std::optional<fs::path> {
            if (!entry.contains(role) || !entry.at(role).contains("file")) return std::nullopt;
            const fs::path p = dir / entry.at(role).at("file").get<std::string>();
            if (!fs::exists(p)) return std::nullopt;
            return p;
        };
        const auto sig = file_of("signal");
        const auto ref = file_of("reference");
        if (!ref) {
            std::ostringstream msg;
            msg << "missing reference scan for U = " << voltage << " V";
            throw ValidationError(msg.str());
        }
        if (!sig) {
            std::ostringstream msg;
            msg << "missing signal scan for U = " << voltage << " V";
            throw ValidationError(msg.str());
        }
        ScanPair p{read_scan_csv(sig->string()), read_scan_csv(ref->string())};
        if (p.signal.is_reference || !p.reference.is_reference)
            throw ValidationError("scan files for U = " + format_double(voltage) + " V have swapped roles");
        if (p.signal.voltage != voltage)
            throw ValidationError(sig->string() + ": voltage does not match the manifest");
        pairs.push_back(std::move(p));
    }
    if (pairs.empty()) throw ValidationError("manifest lists no scan pairs");
    if (manifest_out) *manifest_out = manifest;
    return pairs;
}

namespace detail {

inline std::string chi_table_csv(const SusceptibilityEstimate& est) {
    std::string out = "voltage,chi,sigma,included\n";
    for (const auto& e : est.per_voltage) {
        out += format_double(e.voltage) + "," + format_double(e.chi) + "," + format_double(e.sigma_stat) + "," +
               (e.included ? "true" : "false") + "\n";
    }
    return out;
}

inline json optional_number(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

} // namespace detail

struct FitResult {
    json estimate;
    std::string chi_table;
    StaircaseAnalysis analysis;
};

/// fit -> differential shift -> chi -> weighted mean, plus the shift-model
/// comparison and the systematic-sensitivity table.
inline FitResult cmd_fit(const std::string& scan_dir, const std::string& config_path, const std::string& out_dir,
                         const Overrides& ov = {}) {
    const ExperimentConfig cfg = effective_config(config_path, ov);
    json manifest;
    const auto pairs = load_scan_pairs(scan_dir, &manifest);
    for (const auto& p : pairs) {
        if (p.reference.voltage != cfg.ref_voltage)
            throw ValidationError("reference scan at " + format_double(p.reference.voltage) +
                                  " V does not match config.ref_voltage_kV");
    }
    const ChiModel model = cfg.chi_model();
    const ExclusionRule rule = cfg.exclusion();

    FitResult out;
    out.analysis = analyze_staircase(pairs, cfg.ref_voltage, model, rule);
    const auto& an = out.analysis;
    std::vector<std::string> warnings = an.warnings;
    if (manifest.value("config_hash", "") != config_hash(cfg.source))
        warnings.push_back("config differs from the one recorded in the scan manifest");

    std::vector<StaircasePoint> points;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        points.push_back({pairs[i].signal.voltage, an.signal_fits[i], an.reference_fits[i]});

    json per_voltage = json::array();
    for (std::size_t i = 0; i < an.estimate.per_voltage.size(); ++i) {
        const auto& e = an.estimate.per_voltage[i];
        per_voltage.push_back({{"voltage_V", e.voltage},
                               {"chi_A3", e.chi},
                               {"sigma_stat_A3", e.sigma_stat},
                               {"included", e.included},
                               {"ambiguous", e.ambiguous},
                               {"alternate_chi_A3", detail::optional_number(e.alternate_chi)},
                               {"visibility", an.signal_fits[i].visibility_V},
                               {"reference_visibility", an.reference_fits[i].visibility_V},
                               {"visibility_ratio", detail::optional_number(e.visibility_ratio)},
                               {"delta_shift_nm", units::m_to_nm(an.shifts[i].delta_shift)},
                               {"delta_shift_sigma_nm", units::m_to_nm(an.shifts[i].sigma)},
                               {"fit_reduced_chi_squared", an.signal_fits[i].chi_squared_reduced}});
    }

    json comparison = json::object();
    for (ShiftModel m : {ShiftModel::averaged_phase, ShiftModel::mean_velocity}) {
        try {
            const auto est = aggregate_weighted_mean(extract_all(points, an.shifts, cfg.ref_voltage, model.with_mode(m)),
                                                     rule);
            comparison[to_string(m)] = {{"chi_A3", est.weighted_mean_chi}, {"sigma_A3", est.weighted_mean_sigma}};
        } catch (const NumericalError& e) {
            comparison[to_string(m)] = nullptr;
            warnings.push_back(to_string(m) + " model: " + e.what());
        }
    }

    json sensitivity = json::array();
    try {
        for (const auto& row : systematic_sensitivity(points, an.shifts, cfg.ref_voltage, model, rule))
            sensitivity.push_back({{"parameter", row.parameter},
                                   {"relative_step", row.relative_step},
                                   {"chi_mean_perturbed_A3", row.chi_mean_perturbed},
                                   {"log_sensitivity", row.log_sensitivity}});
    } catch (const NumericalError& e) {
        warnings.push_back(std::string("sensitivity: ") + e.what());
    }

    // The shift goes as E^2, so a relative field spread h moves chi by about 2h.
    std::vector<std::string> notes = an.estimate.systematic_notes;
    const double h = cfg.deflector.field_homogeneity;
    if (h > 0.0) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "field homogeneity %.3g: chi scale uncertain by about %.3g relative (%.3g A^3)",
                      h, 2.0 * h, 2.0 * h * std::abs(an.estimate.weighted_mean_chi));
        notes.emplace_back(buf);
    }

    json side_chains = nullptr;
    if (cfg.analysis.side_chains)
        side_chains = {{"count", cfg.analysis.side_chains->count},
                       {"per_chain_low_A3", cfg.analysis.side_chains->per_chain_low_A3},
                       {"per_chain_high_A3", cfg.analysis.side_chains->per_chain_high_A3}};

    out.estimate = {{"format", estimate_format},
                    {"config_hash", config_hash(cfg.source)},
                    {"molecule",
                     {{"name", cfg.molecule.name},
                      {"mass_amu", cfg.molecule.mass_amu},
                      {"alpha_stat_A3", cfg.molecule.alpha_stat_A3},
                      {"alpha_stat_sigma_A3", cfg.alpha_stat_sigma_A3},
                      {"internal_temperature_K", cfg.molecule.internal_temperature_K}}},
                    {"shift_model", to_string(model.mode())},
                    {"ref_voltage_V", cfg.ref_voltage},
                    {"weighted_mean_chi_A3", an.estimate.weighted_mean_chi},
                    {"weighted_mean_sigma_A3", an.estimate.weighted_mean_sigma},
                    {"per_voltage", per_voltage},
                    {"model_comparison", comparison},
                    {"sensitivity", sensitivity},
                    {"side_chains", side_chains},
                    {"systematic_notes", notes},
                    {"warnings", warnings}};
    out.chi_table = detail::chi_table_csv(an.estimate);

    const fs::path dir(out_dir);
    detail::ensure_dir(dir);
    detail::write_json(dir / estimate_name, out.estimate);
    write_text_file((dir / chi_table_name).string(), out.chi_table);
    return out;
}

struct CalibrateResult {
    json deflector;
    CalibrationResult calibration;
};

/// Geometry factor K from scans of a species with known chi.
inline CalibrateResult cmd_calibrate(const std::string& scan_dir, double known_chi_A3, const std::string& config_path,
                                     const std::string& out_dir, const Overrides& ov = {}) {
    if (!(known_chi_A3 > 0.0)) throw ValidationError("--known-chi: must be > 0");
    const ExperimentConfig cfg = effective_config(config_path, ov);
    const auto pairs = load_scan_pairs(scan_dir);

    CalibrateResult out;
    out.calibration = calibrate_geometry_factor(pairs, known_chi_A3, cfg.ref_voltage, cfg.chi_model());
    const auto& c = out.calibration;
    json per_voltage = json::array();
    for (std::size_t i = 0; i < c.K_values.size(); ++i)
        per_voltage.push_back({{"voltage_V", c.voltages[i]}, {"K_per_m", c.K_values[i]}, {"K_sigma_per_m", c.K_sigmas[i]}});
    out.deflector = {{"format", deflector_format},
                     {"known_chi_A3", known_chi_A3},
                     {"molecule", cfg.molecule.name},
                     {"geometry_factor_K_per_m", c.deflector.geometry_factor_K},
                     {"geometry_factor_K_sigma_per_m", c.K_sigma},
                     {"reduced_chi_squared", c.reduced_chi_squared},
                     {"consistent", c.consistent},
                     {"per_voltage", per_voltage},
                     {"deflector",
                      {{"geometry_factor_K_per_m", c.deflector.geometry_factor_K},
                       {"max_voltage_kV", units::V_to_kV(c.deflector.max_voltage)},
                       {"field_homogeneity", c.deflector.field_homogeneity}}},
                     {"notes", c.notes}};
    const fs::path dir(out_dir);
    detail::ensure_dir(dir);
    detail::write_json(dir / deflector_name, out.deflector);
    return out;
}

/// Separation of two estimates in units of their combined sigma.
inline double separation_sigma(double chi_a, double sigma_a, double chi_b, double sigma_b) {
    const double s = std::hypot(sigma_a, sigma_b);
    if (chi_a == chi_b) return 0.0;
    if (!(s > 0.0)) throw ValidationError("separation_sigma: combined sigma must be > 0");
    return std::abs(chi_a - chi_b) / s;
}

namespace detail {

struct EstimateSummary {
    std::string label;
    std::string name;
    double chi = 0.0;
    double sigma = 0.0;
    double alpha = 0.0;
    double alpha_sigma = 0.0;
    double temperature = 0.0;
    json side_chains;
    json sensitivity;
};

inline EstimateSummary summarize_estimate(const json& j, const std::string& label) {
    if (!j.is_object() || j.value("format", "") != estimate_format)
        throw ValidationError(label + ": not a " + std::string(estimate_format) + " document");
    EstimateSummary s;
    s.label = label;
    s.chi = nonneg_number(j, "weighted_mean_chi_A3", label);
    s.sigma = nonneg_number(j, "weighted_mean_sigma_A3", label);
    const json& mol = j.at("molecule");
    s.name = mol.value("name", label);
    s.alpha = nonneg_number(mol, "alpha_stat_A3", label + ".molecule");
    s.alpha_sigma = mol.value("alpha_stat_sigma_A3", 0.0);
    s.temperature = mol.value("internal_temperature_K", 0.0);
    s.side_chains = j.value("side_chains", json(nullptr));
    s.sensitivity = j.value("sensitivity", json::array());
    return s;
}

} // namespace detail

/// Pairwise separations, van Vleck consistency per estimate, and the
/// collected sensitivity tables.
inline json build_report(const std::vector<json>& estimates, const std::vector<std::string>& labels) {
    if (estimates.size() < 2) throw ValidationError("report: need at least 2 estimates");
    std::vector<detail::EstimateSummary> s;
    for (std::size_t i = 0; i < estimates.size(); ++i)
        s.push_back(detail::summarize_estimate(estimates[i], i < labels.size() ? labels[i] : "estimate" + std::to_string(i)));

    json pairs = json::array();
    for (std::size_t a = 0; a < s.size(); ++a)
        for (std::size_t b = a + 1; b < s.size(); ++b)
            pairs.push_back({{"a", s[a].label},
                             {"b", s[b].label},
                             {"difference_A3", s[b].chi - s[a].chi},
                             {"separation_sigma", separation_sigma(s[a].chi, s[a].sigma, s[b].chi, s[b].sigma)}});

    json entries = json::array();
    for (const auto& e : s) {
        json vv = nullptr;
        if (e.side_chains.is_object()) {
            const Interval budget = side_chain_budget(e.side_chains.at("count").get<int>(),
                                                      e.side_chains.at("per_chain_low_A3").get<double>(),
                                                      e.side_chains.at("per_chain_high_A3").get<double>());
            // The excess interval carries the alpha uncertainty only; the
            // measured sigma is reported alongside.
            const VanVleckConsistency c = van_vleck_consistency(e.chi, 0.0, e.alpha, e.alpha_sigma, budget);
            vv = {{"excess_A3", {c.excess.low, c.excess.high}},
                  {"budget_A3", {c.budget.low, c.budget.high}},
                  {"status", c.consistent ? "consistent" : "inconsistent"}};
            if (e.temperature > 0.0) {
                vv["temperature_K"] = e.temperature;
                vv["dipole_rms_debye_for_excess"] = dipole_rms_for_term(std::max(e.chi - e.alpha, 0.0), e.temperature);
            }
        }
        entries.push_back({{"label", e.label},
                           {"molecule", e.name},
                           {"chi_A3", e.chi},
                           {"sigma_A3", e.sigma},
                           {"alpha_stat_A3", e.alpha},
                           {"alpha_stat_sigma_A3", e.alpha_sigma},
                           {"van_vleck", vv},
                           {"sensitivity", e.sensitivity}});
    }
    return {{"format", report_format}, {"estimates", entries}, {"pairs", pairs}};
}

inline json cmd_report(const std::vector<std::string>& estimate_paths, const std::string& out_dir) {
    std::vector<json> docs;
    for (const auto& p : estimate_paths) docs.push_back(read_json_file(p));
    const json report = build_report(docs, estimate_paths);
    const fs::path dir(out_dir);
    detail::ensure_dir(dir);
    detail::write_json(dir / report_name, report);
    return report;
}

} // namespace kdtl::io
