#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kdtl/beamline.hpp"
#include "kdtl/error.hpp"
#include "kdtl/fit.hpp"
#include "kdtl/unwrap.hpp"

namespace kdtl {

/// How the model shift is computed from chi.
enum class ShiftModel {
    /// Phase of the velocity-averaged pattern, including dephasing.
    averaged_phase,
    /// Single-velocity law evaluated at the mean velocity.
    mean_velocity,
};

inline std::string to_string(ShiftModel m) {
    return m == ShiftModel::averaged_phase ? "averaged_phase" : "mean_velocity";
}

/// Everything the forward model needs to turn chi into a differential shift.
class ChiModel {
public:
    ChiModel(MoleculeSpec molecule, GratingSet gratings, DeflectorConfig deflector, VelocityDistribution vdist,
             ShiftModel mode = ShiftModel::averaged_phase, unsigned nodes = 64)
        : molecule_(std::move(molecule)),
          gratings_(gratings),
          deflector_(deflector),
          vdist_(std::move(vdist)),
          mode_(mode),
          nodes_(nodes),
          table_(molecule_, gratings_, vdist_, nodes) {}

    /// Model dx3(U) - dx3(U_ref) for susceptibility chi [A^3].
    double delta_shift(double chi_A3, double voltage, double ref_voltage) const {
        if (mode_ == ShiftModel::mean_velocity) {
            const double v = vdist_.v_mean;
            return stark_fringe_shift(chi_A3, voltage, molecule_.mass_amu, v, deflector_) -
                   stark_fringe_shift(chi_A3, ref_voltage, molecule_.mass_amu, v, deflector_);
        }
        return table_.evaluate(chi_A3, voltage, deflector_).shift - table_.evaluate(chi_A3, ref_voltage, deflector_).shift;
    }

    EffectiveFringe effective(double chi_A3, double voltage) const { return table_.evaluate(chi_A3, voltage, deflector_); }

    const MoleculeSpec& molecule() const { return molecule_; }
    const GratingSet& gratings() const { return gratings_; }
    const DeflectorConfig& deflector() const { return deflector_; }
    const VelocityDistribution& vdist() const { return vdist_; }
    ShiftModel mode() const { return mode_; }
    unsigned nodes() const { return nodes_; }

    ChiModel with_deflector(const DeflectorConfig& d) const { return {molecule_, gratings_, d, vdist_, mode_, nodes_}; }
    ChiModel with_gratings(const GratingSet& g) const { return {molecule_, g, deflector_, vdist_, mode_, nodes_}; }
    ChiModel with_vdist(const VelocityDistribution& v) const { return {molecule_, gratings_, deflector_, v, mode_, nodes_}; }
    ChiModel with_mode(ShiftModel m) const { return {molecule_, gratings_, deflector_, vdist_, m, nodes_}; }

private:
    MoleculeSpec molecule_;
    GratingSet gratings_;
    DeflectorConfig deflector_;
    VelocityDistribution vdist_;
    ShiftModel mode_;
    unsigned nodes_;
    VelocityTable table_;
};

inline constexpr double default_chi_max_A3 = 1e4;

/// Root of f on [lo, hi] by bisection down to a relative bracket of 1e-6,
/// then safeguarded secant steps to a relative tolerance of 1e-10.
inline double find_root(const std::function<double(double)>& f, double lo, double hi) {
    double flo = f(lo);
    double fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0.0) == (fhi > 0.0)) throw ExtractionError("find_root: no sign change in bracket");
    for (int it = 0; it < 200 && (hi - lo) > 1e-6 * std::max(std::abs(lo), std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fhi = fm;
        }
    }
    double x0 = lo, f0 = flo, x1 = hi, f1 = fhi;
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 60; ++it) {
        double next = x1 - f1 * (x1 - x0) / (f1 - f0);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double fn = f(next);
        const double step = std::abs(next - x);
        x = next;
        if (fn == 0.0) return x;
        if ((fn > 0.0) == (flo > 0.0)) {
            lo = x;
            flo = fn;
        } else {
            hi = x;
            fhi = fn;
        }
        x0 = x1;
        f0 = f1;
        x1 = x;
        f1 = fn;
        if (step <= 1e-10 * std::max(std::abs(x), 1e-300)) return x;
    }
    return x;
}

struct ChiExtraction {
    double chi = 0.0;
    double sigma_stat = 0.0;
    bool ambiguous = false;
    /// Extraction from the runner-up branch when the input was ambiguous.
    std::optional<double> alternate_chi;
};

namespace detail {

inline double solve_chi(double target, double voltage, double ref_voltage, const ChiModel& model, double chi_max) {
    auto f = [&](double chi) { return model.delta_shift(chi, voltage, ref_voltage) - target; };
    try {
        return find_root(f, 0.0, chi_max);
    } catch (const ExtractionError&) {
        std::ostringstream msg;
        msg << "extract_chi_at_voltage: no chi in [0, " << chi_max << "] reproduces shift " << target << " m at U = "
            << voltage << " V";
        throw ExtractionError(msg.str());
    }
}

} // namespace detail

/// Solves model.delta_shift(chi, U, U_ref) = measured shift for chi, with
/// the statistical error carried through the local slope d(shift)/d(chi).
inline ChiExtraction extract_chi_at_voltage(const DifferentialShift& shift, double voltage, double ref_voltage,
                                            const ChiModel& model, double chi_max = default_chi_max_A3) {
    detail::require_domain(voltage != ref_voltage, "extract_chi_at_voltage: voltage equals reference voltage");
    ChiExtraction out;
    out.chi = detail::solve_chi(shift.delta_shift, voltage, ref_voltage, model, chi_max);
    const double h = 1e-4 * std::max(out.chi, 1.0);
    const double lo = std::max(out.chi - h, 0.0);
    const double slope =
        (model.delta_shift(out.chi + h, voltage, ref_voltage) - model.delta_shift(lo, voltage, ref_voltage)) /
        (out.chi + h - lo);
    out.sigma_stat = shift.sigma / std::abs(slope);
    if (shift.ambiguous && shift.alternate) {
        out.ambiguous = true;
        try {
            out.alternate_chi = detail::solve_chi(*shift.alternate, voltage, ref_voltage, model, chi_max);
        } catch (const ExtractionError&) {
            // The other branch has no physical chi; keep the primary one.
        }
    }
    return out;
}

struct PerVoltageChi {
    double voltage = 0.0;
    double chi = 0.0;
    double sigma_stat = 0.0;
    /// V(U)/V(U_ref) from the fitted scans, when known.
    std::optional<double> visibility_ratio;
    bool included = true;
    bool ambiguous = false;
    std::optional<double> alternate_chi;
};

/// Entries excluded from the weighted mean: listed voltages, and optionally
/// every voltage whose visibility fell below `visibility_threshold` times
/// the reference visibility.
struct ExclusionRule {
    std::vector<double> voltages;
    std::optional<double> visibility_threshold;
    double voltage_tolerance = 1e-6;

    static ExclusionRule none() { return {}; }
    static ExclusionRule by_voltage(std::vector<double> v) { return {std::move(v), std::nullopt}; }
    static ExclusionRule by_visibility(double threshold = 0.3) { return {{}, threshold}; }

    bool excludes(const PerVoltageChi& e) const {
        for (double v : voltages)
            if (std::abs(v - e.voltage) <= voltage_tolerance * std::max(1.0, std::abs(v))) return true;
        return visibility_threshold && e.visibility_ratio && *e.visibility_ratio < *visibility_threshold;
    }
};

struct SusceptibilityEstimate {
    std::vector<PerVoltageChi> per_voltage;
    double weighted_mean_chi = 0.0;
    double weighted_mean_sigma = 0.0;
    std::vector<std::string> systematic_notes;
};

/// Inverse-variance weighted mean over the entries the rule keeps.
inline SusceptibilityEstimate aggregate_weighted_mean(std::vector<PerVoltageChi> per_voltage,
                                                      const ExclusionRule& exclusion = {}) {
    double sw = 0.0;
    double swx = 0.0;
    for (auto& e : per_voltage) {
        if (!(e.sigma_stat > 0.0)) throw AggregationError("aggregate_weighted_mean: sigma_stat must be > 0");
        e.included = !exclusion.excludes(e);
        if (!e.included) continue;
        const double w = 1.0 / (e.sigma_stat * e.sigma_stat);
        sw += w;
        swx += w * e.chi;
    }
    if (sw == 0.0) throw AggregationError("aggregate_weighted_mean: no entries left after exclusion");
    SusceptibilityEstimate out;
    out.per_voltage = std::move(per_voltage);
    out.weighted_mean_chi = swx / sw;
    out.weighted_mean_sigma = 1.0 / std::sqrt(sw);
    return out;
}

/// Fits, differential shifts and per-voltage chi of one staircase run.
struct StaircaseAnalysis {
    std::vector<FringeFit> signal_fits;
    std::vector<FringeFit> reference_fits;
    std::vector<DifferentialShift> shifts;
    SusceptibilityEstimate estimate;
    std::vector<std::string> warnings;
};

inline std::vector<StaircasePoint> fit_pairs(const std::vector<ScanPair>& pairs, double period_d) {
    std::vector<StaircasePoint> points;
    points.reserve(pairs.size());
    for (const auto& p : pairs)
        points.push_back({p.signal.voltage, fit_sinusoid(p.signal, period_d), fit_sinusoid(p.reference, period_d)});
    return points;
}

/// chi per voltage from already-unwrapped shifts.
inline std::vector<PerVoltageChi> extract_all(const std::vector<StaircasePoint>& points,
                                              const std::vector<DifferentialShift>& shifts, double ref_voltage,
                                              const ChiModel& model) {
    std::vector<PerVoltageChi> out;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const ChiExtraction x = extract_chi_at_voltage(shifts[i], points[i].voltage, ref_voltage, model);
        PerVoltageChi e;
        e.voltage = points[i].voltage;
        e.chi = x.chi;
        e.sigma_stat = x.sigma_stat;
        if (points[i].reference.visibility_V > 0.0)
            e.visibility_ratio = points[i].signal.visibility_V / points[i].reference.visibility_V;
        e.ambiguous = x.ambiguous;
        e.alternate_chi = x.alternate_chi;
        out.push_back(e);
    }
    return out;
}

/// Full per-run pipeline: fit every scan, unwrap across the staircase,
/// extract chi per voltage and aggregate.
inline StaircaseAnalysis analyze_staircase(const std::vector<ScanPair>& pairs, double ref_voltage,
                                           const ChiModel& model, const ExclusionRule& exclusion = {}) {
    if (pairs.empty()) throw ValidationError("analyze_staircase: no scan pairs");
    const double d = model.gratings().period_d;
    const std::vector<StaircasePoint> points = fit_pairs(pairs, d);
    StaircaseAnalysis out;
    for (const auto& p : points) {
        out.signal_fits.push_back(p.signal);
        out.reference_fits.push_back(p.reference);
        if (p.signal.low_contrast) {
            std::ostringstream msg;
            msg << "low contrast at U = " << p.voltage << " V";
            out.warnings.push_back(msg.str());
        }
    }
    out.shifts = unwrap_staircase(points, ref_voltage);
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (out.shifts[i].ambiguous) {
            std::ostringstream msg;
            msg << "ambiguous phase unwrap at U = " << points[i].voltage << " V";
            out.warnings.push_back(msg.str());
        }
    }
    out.estimate = aggregate_weighted_mean(extract_all(points, out.shifts, ref_voltage, model), exclusion);
    return out;
}

struct CalibrationResult {
    DeflectorConfig deflector;
    double K_sigma = 0.0;
    double reduced_chi_squared = 0.0;
    /// Per-voltage K estimates and their errors.
    std::vector<double> voltages;
    std::vector<double> K_values;
    std::vector<double> K_sigmas;
    bool consistent = true;
    std::vector<std::string> notes;
};

inline constexpr double calibration_chi2_flag = 3.0;

/// Geometry factor from a reference species of known chi. The model shift
/// depends on K and chi only through K chi, so each voltage yields
/// K_i = K0 chi_i / known_chi, and K is their inverse-variance weighted mean.
/// K0 comes from a mean-velocity estimate so the chi root stays inside its
/// bracket whatever the template holds.
inline CalibrationResult calibrate_geometry_factor(const std::vector<ScanPair>& pairs, double known_chi_A3,
                                                   double ref_voltage, const ChiModel& template_model) {
    detail::require_domain(known_chi_A3 > 0.0, "calibrate_geometry_factor: known chi must be > 0");
    std::vector<double> distinct;
    for (const auto& p : pairs) {
        if (std::none_of(distinct.begin(), distinct.end(),
                         [&](double v) { return std::abs(v - p.signal.voltage) <= 1e-6 * std::max(1.0, v); }))
            distinct.push_back(p.signal.voltage);
    }
    if (distinct.size() < 2) throw CalibrationError("calibrate_geometry_factor: need scans at >= 2 distinct voltages");

    const double d = template_model.gratings().period_d;
    const std::vector<StaircasePoint> points = fit_pairs(pairs, d);
    const std::vector<DifferentialShift> shifts = unwrap_staircase(points, ref_voltage);

    // Closed-form K chi product at the mean velocity.
    const double m = units::amu_to_kg(template_model.molecule().mass_amu);
    const double v = template_model.vdist().v_mean;
    double sw = 0.0, swx = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double lever = points[i].voltage * points[i].voltage - ref_voltage * ref_voltage;
        if (lever == 0.0) continue;
        const double product = shifts[i].delta_shift * m * v * v / (lever * units::A3_to_si(1.0));
        const double w = 1.0 / (shifts[i].sigma * shifts[i].sigma) * lever * lever;
        sw += w;
        swx += w * product;
    }
    if (!(sw > 0.0) || !(swx / sw > 0.0))
        throw CalibrationError("calibrate_geometry_factor: calibration shifts do not grow with voltage");

    DeflectorConfig start = template_model.deflector();
    start.geometry_factor_K = (swx / sw) / known_chi_A3;
    const ChiModel model = template_model.with_deflector(start);

    CalibrationResult out;
    double kw = 0.0, kwx = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].voltage == ref_voltage) continue;
        const ChiExtraction x = extract_chi_at_voltage(shifts[i], points[i].voltage, ref_voltage, model);
        const double k = start.geometry_factor_K * x.chi / known_chi_A3;
        const double ks = start.geometry_factor_K * x.sigma_stat / known_chi_A3;
        out.voltages.push_back(points[i].voltage);
        out.K_values.push_back(k);
        out.K_sigmas.push_back(ks);
        kw += 1.0 / (ks * ks);
        kwx += k / (ks * ks);
    }
    const double k_hat = kwx / kw;
    double chi2 = 0.0;
    for (std::size_t i = 0; i < out.K_values.size(); ++i) {
        const double r = (out.K_values[i] - k_hat) / out.K_sigmas[i];
        chi2 += r * r;
    }
    out.deflector = template_model.deflector();
    out.deflector.geometry_factor_K = k_hat;
    out.K_sigma = 1.0 / std::sqrt(kw);
    out.reduced_chi_squared = out.K_values.size() > 1 ? chi2 / static_cast<double>(out.K_values.size() - 1) : 0.0;
    out.consistent = out.reduced_chi_squared <= calibration_chi2_flag;

    std::ostringstream k_note;
    k_note << "geometry factor K = " << k_hat << " +- " << out.K_sigma << " 1/m from " << out.K_values.size()
           << " voltages, known chi = " << known_chi_A3 << " A^3";
    out.notes.push_back(k_note.str());
    std::ostringstream chi_note;
    chi_note << "reduced chi^2 = " << out.reduced_chi_squared;
    out.notes.push_back(chi_note.str());
    if (!out.consistent) {
        std::ostringstream flag;
        flag << "inconsistent calibration: reduced chi^2 " << out.reduced_chi_squared << " exceeds "
             << calibration_chi2_flag;
        out.notes.push_back(flag.str());
    }
    return out;
}

/// d ln(chi_mean) / d ln(p) for one instrument parameter.
struct SensitivityRow {
    std::string parameter;
    double relative_step = 0.0;
    double chi_mean_perturbed = 0.0;
    double log_sensitivity = 0.0;
};

/// Finite-difference sensitivity of the weighted mean to the mean velocity,
/// laser power and laser waist, reusing the fitted shifts of one run.
inline std::vector<SensitivityRow> systematic_sensitivity(const std::vector<StaircasePoint>& points,
                                                          const std::vector<DifferentialShift>& shifts,
                                                          double ref_voltage, const ChiModel& model,
                                                          const ExclusionRule& exclusion = {},
                                                          double relative_step = 0.01) {
    const double base =
        aggregate_weighted_mean(extract_all(points, shifts, ref_voltage, model), exclusion).weighted_mean_chi;
    auto row = [&](const std::string& name, const ChiModel& perturbed) {
        const double chi =
            aggregate_weighted_mean(extract_all(points, shifts, ref_voltage, perturbed), exclusion).weighted_mean_chi;
        return SensitivityRow{name, relative_step, chi, std::log(chi / base) / std::log1p(relative_step)};
    };
    GratingSet power = model.gratings();
    power.laser_power *= 1.0 + relative_step;
    GratingSet waist = model.gratings();
    waist.laser_waist *= 1.0 + relative_step;
    return {row("v_mean", model.with_vdist(model.vdist().scaled(1.0 + relative_step))),
            row("laser_power", model.with_gratings(power)), row("laser_waist", model.with_gratings(waist))};
}

} // namespace kdtl
