#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdtl/beamline.hpp"
#include "kdtl/error.hpp"
#include "kdtl/extraction.hpp"
#include "kdtl/fringe_model.hpp"
#include "kdtl/matter_wave.hpp"
#include "kdtl/units.hpp"
#include "kdtl/velocity.hpp"

namespace kdtl::io {

using nlohmann::json;

struct SideChainBudget {
    int count = 0;
    double per_chain_low_A3 = 0.0;
    double per_chain_high_A3 = 0.0;
};

struct AnalysisConfig {
    std::vector<double> exclude_voltages;  // V
    std::optional<double> visibility_threshold;
    ShiftModel shift_model = ShiftModel::averaged_phase;
    std::optional<SideChainBudget> side_chains;
};

/// A complete experiment: instrument, species and scan protocol. Stored in
/// SI; the JSON form uses unit-suffixed keys.
struct ExperimentConfig {
    MoleculeSpec molecule;
    double alpha_stat_sigma_A3 = 0.0;
    GratingSet gratings;
    DeflectorConfig deflector;
    VelocityDistribution vdist;
    std::vector<double> voltages;  // V
    double ref_voltage = 1000.0;   // V
    double scan_start_nm = 0.0;
    double scan_step_nm = 26.0;
    int scan_count = 41;
    double rate_scale = 1.0;
    double integration_time = 1.0;
    std::uint64_t master_seed = 1;
    bool noiseless = false;
    AnalysisConfig analysis;
    /// The JSON the config was read from, for hashing and provenance.
    json source;

    ScanGrid grid() const { return {units::nm_to_m(scan_start_nm), units::nm_to_m(scan_step_nm), scan_count}; }

    ExclusionRule exclusion() const {
        ExclusionRule rule;
        rule.voltages = analysis.exclude_voltages;
        rule.visibility_threshold = analysis.visibility_threshold;
        return rule;
    }

    ChiModel chi_model() const { return {molecule, gratings, deflector, vdist, analysis.shift_model}; }

    StaircaseSpec staircase(unsigned threads = 1) const {
        StaircaseSpec s;
        s.voltages = voltages;
        s.ref_voltage = ref_voltage;
        s.grid = grid();
        s.rate_scale = rate_scale;
        s.integration_time = integration_time;
        s.master_seed = master_seed;
        s.synthesis.poisson_noise = !noiseless;
        s.threads = threads;
        return s;
    }

    void validate() const {
        molecule.validate();
        gratings.validate();
        deflector.validate();
        vdist.validate();
        if (voltages.empty()) throw ValidationError("config.voltages_kV: must not be empty");
        for (double u : voltages) {
            if (!(u >= 0.0) || u > deflector.max_voltage)
                throw ValidationError("config.voltages_kV: every voltage must lie in [0, deflector.max_voltage_kV]");
        }
        if (!(ref_voltage >= 0.0) || ref_voltage > deflector.max_voltage)
            throw ValidationError("config.ref_voltage_kV: must lie in [0, deflector.max_voltage_kV]");
        if (!(scan_step_nm > 0.0)) throw ValidationError("config.scan.step_nm: must be > 0");
        if (scan_count < 6) throw ValidationError("config.scan.count: must be >= 6");
        if (!(rate_scale > 0.0)) throw ValidationError("config.rate_scale_per_s: must be > 0");
        if (!(integration_time > 0.0)) throw ValidationError("config.integration_time_s: must be > 0");
        if (analysis.visibility_threshold && !(*analysis.visibility_threshold > 0.0))
            throw ValidationError("config.analysis.visibility_threshold: must be > 0");
    }
};

namespace detail {

/// Reads members of one JSON object, remembering which keys were used so
/// that anything left over can be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError(path_ + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw ValidationError(field(key) + ": missing required key");
        return j_.at(key);
    }

    double number(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number()) throw ValidationError(field(key) + ": expected a number");
        return v.get<double>();
    }

    double number_or(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        return number(key);
    }

    std::int64_t integer(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number_integer()) throw ValidationError(field(key) + ": expected an integer");
        return v.get<std::int64_t>();
    }

    std::uint64_t unsigned_integer(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
            throw ValidationError(field(key) + ": expected a non-negative integer");
        return v.get<std::uint64_t>();
    }

    std::string string(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_string()) throw ValidationError(field(key) + ": expected a string");
        return v.get<std::string>();
    }

    bool boolean_or(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_boolean()) throw ValidationError(field(key) + ": expected true or false");
        return v.get<bool>();
    }

    std::vector<double> numbers(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_array()) throw ValidationError(field(key) + ": expected an array of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) throw ValidationError(field(key) + ": expected an array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

    std::string field(const std::string& key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) throw ValidationError(field(key) + ": unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline MoleculeSpec parse_molecule(const json& j, double& alpha_sigma) {
    ObjectReader r(j, "config.molecule");
    MoleculeSpec m;
    m.name = r.has("name") ? r.string("name") : "molecule";
    m.mass_amu = r.number("mass_amu");
    m.alpha_stat_A3 = r.number("alpha_stat_A3");
    alpha_sigma = r.number_or("alpha_stat_sigma_A3", 0.0);
    m.alpha_opt_A3 = r.number_or("alpha_opt_A3", m.alpha_stat_A3);
    m.chi_true_A3 = r.number("chi_true_A3");
    m.internal_temperature_K = r.number_or("internal_temperature_K", 0.0);
    if (r.has("dipole_model")) {
        const json& arr = r.raw("dipole_model");
        if (!arr.is_array()) throw ValidationError("config.molecule.dipole_model: expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            ObjectReader c(arr[i], "config.molecule.dipole_model[" + std::to_string(i) + "]");
            DipoleComponent comp;
            comp.dipole_debye = c.number("dipole_debye");
            comp.multiplicity = c.number_or("multiplicity", 1.0);
            c.finish();
            m.dipole_model.push_back(comp);
        }
    }
    r.finish();
    return m;
}

inline GratingSet parse_gratings(const json& j) {
    ObjectReader r(j, "config.gratings");
    GratingSet g;
    g.period_d = units::nm_to_m(r.number("period_d_nm"));
    g.open_fraction_g1 = r.number_or("open_fraction_g1", 100.0 / 266.0);
    g.open_fraction_g3 = r.number_or("open_fraction_g3", 100.0 / 266.0);
    g.spacing_L = r.number("spacing_L_mm") * 1e-3;
    g.laser_wavelength = units::nm_to_m(r.number("laser_wavelength_nm"));
    g.laser_power = r.number("laser_power_W");
    g.laser_waist = r.number("laser_waist_um") * 1e-6;
    r.finish();
    return g;
}

inline DeflectorConfig parse_deflector(const json& j) {
    ObjectReader r(j, "config.deflector");
    DeflectorConfig d;
    d.geometry_factor_K = r.number("geometry_factor_K_per_m");
    d.max_voltage = units::kV_to_V(r.number("max_voltage_kV"));
    d.field_homogeneity = r.number_or("field_homogeneity", 0.01);
    r.finish();
    return d;
}

inline VelocityDistribution parse_velocity(const json& j) {
    ObjectReader r(j, "config.velocity");
    const std::string kind = r.string("kind");
    VelocityDistribution out;
    if (kind == "gaussian") {
        out.kind = VelocityKind::gaussian;
        out.v_mean = r.number("v_mean_m_per_s");
        out.fwhm_fraction = r.number("fwhm_fraction");
    } else if (kind == "histogram") {
        const json& arr = r.raw("bins");
        if (!arr.is_array()) throw ValidationError("config.velocity.bins: expected an array");
        std::vector<VelocityBin> bins;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            ObjectReader b(arr[i], "config.velocity.bins[" + std::to_string(i) + "]");
            bins.push_back({b.number("velocity_m_per_s"), b.number("weight")});
            b.finish();
        }
        out = VelocityDistribution::histogram(std::move(bins));
    } else {
        throw ValidationError("config.velocity.kind: expected \"gaussian\" or \"histogram\"");
    }
    r.finish();
    return out;
}

inline AnalysisConfig parse_analysis(const json& j) {
    ObjectReader r(j, "config.analysis");
    AnalysisConfig a;
    if (r.has("exclude_voltages_kV"))
        for (double u : r.numbers("exclude_voltages_kV")) a.exclude_voltages.push_back(units::kV_to_V(u));
    if (r.has("visibility_threshold")) a.visibility_threshold = r.number("visibility_threshold");
    if (r.has("shift_model")) {
        const std::string m = r.string("shift_model");
        if (m == "averaged_phase") a.shift_model = ShiftModel::averaged_phase;
        else if (m == "mean_velocity") a.shift_model = ShiftModel::mean_velocity;
        else throw ValidationError("config.analysis.shift_model: expected \"averaged_phase\" or \"mean_velocity\"");
    }
    if (r.has("side_chains")) {
        ObjectReader s(r.raw("side_chains"), "config.analysis.side_chains");
        SideChainBudget b;
        b.count = static_cast<int>(s.integer("count"));
        b.per_chain_low_A3 = s.number("per_chain_low_A3");
        b.per_chain_high_A3 = s.number("per_chain_high_A3");
        s.finish();
        if (b.count < 0 || b.per_chain_low_A3 < 0.0 || b.per_chain_low_A3 > b.per_chain_high_A3)
            throw ValidationError("config.analysis.side_chains: need count >= 0 and 0 <= low <= high");
        a.side_chains = b;
    }
    r.finish();
    return a;
}

} // namespace detail

inline ExperimentConfig parse_config(const json& j) {
    detail::ObjectReader r(j, "config");
    ExperimentConfig c;
    c.source = j;
    c.molecule = detail::parse_molecule(r.raw("molecule"), c.alpha_stat_sigma_A3);
    c.gratings = detail::parse_gratings(r.raw("gratings"));
    c.deflector = detail::parse_deflector(r.raw("deflector"));
    c.vdist = detail::parse_velocity(r.raw("velocity"));
    for (double u : r.numbers("voltages_kV")) c.voltages.push_back(units::kV_to_V(u));
    c.ref_voltage = units::kV_to_V(r.number("ref_voltage_kV"));
    {
        detail::ObjectReader s(r.raw("scan"), "config.scan");
        c.scan_start_nm = s.number_or("start_nm", 0.0);
        c.scan_step_nm = s.number("step_nm");
        c.scan_count = static_cast<int>(s.integer("count"));
        s.finish();
    }
    c.rate_scale = r.number("rate_scale_per_s");
    c.integration_time = r.number("integration_time_s");
    c.master_seed = r.unsigned_integer("master_seed");
    c.noiseless = r.boolean_or("noiseless", false);
    if (r.has("analysis")) c.analysis = detail::parse_analysis(r.raw("analysis"));
    r.finish();
    c.validate();
    return c;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": invalid JSON: " + e.what());
    }
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(read_json_file(path)); }

/// FNV-1a over the canonical (sorted-key, compact) JSON text.
inline std::string config_hash(const json& j) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    std::ostringstream out;
    out << "fnv1a64:" << std::hex;
    out.width(16);
    out.fill('0');
    out << h;
    return out.str();
}

} // namespace kdtl::io
