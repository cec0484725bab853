#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <future>
#include <random>
#include <string>
#include <vector>

#include "kdtl/error.hpp"
#include "kdtl/fringe_model.hpp"
#include "kdtl/matter_wave.hpp"
#include "kdtl/quadrature.hpp"
#include "kdtl/units.hpp"
#include "kdtl/velocity.hpp"

namespace kdtl {

/// Electrostatic deflector between G1 and G2.
///
/// The fringe shift is dx3 = K chi U^2 / (m v^2) with chi in C m^2/V, U in V,
/// m in kg and v in m/s, which leaves K in 1/m. K is the geometry factor
/// fixed by a calibration run on a reference species.
struct DeflectorConfig {
    double geometry_factor_K = 4.2e3;
    double max_voltage = 12e3;
    /// Relative field variation across the beam. Reported, not modelled.
    double field_homogeneity = 0.01;

    void validate() const {
        if (!(geometry_factor_K > 0.0)) throw ValidationError("deflector.geometry_factor_K must be > 0");
        if (!(max_voltage > 0.0)) throw ValidationError("deflector.max_voltage must be > 0");
        if (!(field_homogeneity >= 0.0)) throw ValidationError("deflector.field_homogeneity must be >= 0");
    }
};

/// Lateral fringe displacement at G3 [m] for a single velocity.
inline double stark_fringe_shift(double chi_A3, double voltage, double mass_amu, double velocity,
                                 const DeflectorConfig& deflector) {
    detail::require_domain(mass_amu > 0.0, "stark_fringe_shift: mass must be > 0");
    detail::require_domain(velocity > 0.0, "stark_fringe_shift: velocity must be > 0");
    detail::require_domain(voltage >= 0.0 && voltage <= deflector.max_voltage,
                           "stark_fringe_shift: voltage outside [0, max_voltage]");
    return deflector.geometry_factor_K * units::A3_to_si(chi_A3) * voltage * voltage /
           (units::amu_to_kg(mass_amu) * velocity * velocity);
}

/// Noiseless first-harmonic parameters of the velocity-averaged pattern
/// S(x) = O + A sin(2 pi (x - shift) / d).
struct EffectiveFringe {
    double offset = 0.0;
    double amplitude = 0.0;
    /// Continuous branch: the phase of the averaged pattern taken nearest to
    /// the shift of the mean velocity, so it grows smoothly with chi U^2.
    double shift = 0.0;
};

/// Per-node fringe coefficients of a velocity rule. They do not depend on
/// chi or U, so one table serves every shift evaluation.
class VelocityTable {
public:
    VelocityTable(const MoleculeSpec& molecule, const GratingSet& gratings, const VelocityDistribution& vdist,
                  unsigned nodes = 64)
        : mass_amu_(molecule.mass_amu), period_(gratings.period_d), v_centre_(vdist.v_mean) {
        const QuadratureRule rule = vdist.rule(nodes);
        double field_free = 0.0;
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            const SignedHarmonic h = signed_first_harmonic(molecule, gratings, rule.nodes[i]);
            entries_.push_back({rule.nodes[i], rule.weights[i], h.offset, h.amplitude});
            field_free += rule.weights[i] * h.amplitude;
        }
        inverted_ = field_free < 0.0;
    }

    EffectiveFringe evaluate(double chi_A3, double voltage, const DeflectorConfig& deflector) const {
        const double centre_shift = stark_fringe_shift(chi_A3, voltage, mass_amu_, v_centre_, deflector);
        const double k = 2.0 * constants::pi / period_;
        double offset = 0.0;
        std::complex<double> relative{0.0, 0.0};
        for (const auto& e : entries_) {
            const double s = stark_fringe_shift(chi_A3, voltage, mass_amu_, e.velocity, deflector);
            offset += e.weight * e.offset;
            relative += e.weight * e.amplitude * std::polar(1.0, k * (s - centre_shift));
        }
        EffectiveFringe out;
        out.offset = offset;
        out.amplitude = std::abs(relative);
        // An overall negative amplitude is a half-period displacement.
        const std::complex<double> oriented = inverted_ ? -relative : relative;
        out.shift = centre_shift + std::arg(oriented) / k + (inverted_ ? 0.5 * period_ : 0.0);
        return out;
    }

    double period() const { return period_; }
    double mass_amu() const { return mass_amu_; }
    std::size_t size() const { return entries_.size(); }

    /// Largest single-velocity visibility over the rule's support.
    double max_visibility() const {
        double best = 0.0;
        for (const auto& e : entries_)
            if (e.offset > 0.0) best = std::max(best, std::abs(e.amplitude) / e.offset);
        return best;
    }

private:
    struct Entry {
        double velocity;
        double weight;
        double offset;
        double amplitude;
    };
    double mass_amu_;
    double period_;
    double v_centre_;
    bool inverted_ = false;
    std::vector<Entry> entries_;
};

struct QuadratureControl {
    unsigned initial_nodes = 64;
    unsigned max_nodes = 1024;
    /// Accepted step-doubling error, relative to the effective offset.
    double tolerance = 1e-4;
};

/// Velocity-averaged O, A and shift at `voltage` for susceptibility `chi_A3`.
/// Gaussian distributions are integrated by Gauss-Legendre with step doubling
/// as the error estimate; histograms are summed exactly.
inline EffectiveFringe effective_fringe_parameters(const MoleculeSpec& molecule, const GratingSet& gratings,
                                                   const DeflectorConfig& deflector,
                                                   const VelocityDistribution& vdist, double voltage, double chi_A3,
                                                   const QuadratureControl& control = {}) {
    if (vdist.kind == VelocityKind::histogram)
        return VelocityTable(molecule, gratings, vdist).evaluate(chi_A3, voltage, deflector);

    unsigned n = control.initial_nodes;
    EffectiveFringe coarse = VelocityTable(molecule, gratings, vdist, n / 2).evaluate(chi_A3, voltage, deflector);
    while (true) {
        const EffectiveFringe fine = VelocityTable(molecule, gratings, vdist, n).evaluate(chi_A3, voltage, deflector);
        const double k = 2.0 * constants::pi / gratings.period_d;
        const std::complex<double> zf = std::polar(fine.amplitude, k * fine.shift);
        const std::complex<double> zc = std::polar(coarse.amplitude, k * coarse.shift);
        const double err = std::max(std::abs(fine.offset - coarse.offset), std::abs(zf - zc));
        if (err <= control.tolerance * fine.offset) return fine;
        if (2 * n > control.max_nodes) {
            throw NumericalError("effective_fringe_parameters: velocity quadrature did not converge (relative error " +
                                 std::to_string(err / fine.offset) + " with " + std::to_string(n) + " nodes)");
        }
        coarse = fine;
        n *= 2;
    }
}

/// Uses the molecule's true susceptibility.
inline EffectiveFringe effective_fringe_parameters(const MoleculeSpec& molecule, const GratingSet& gratings,
                                                   const DeflectorConfig& deflector,
                                                   const VelocityDistribution& vdist, double voltage) {
    return effective_fringe_parameters(molecule, gratings, deflector, vdist, voltage, molecule.chi_true_A3);
}

struct ScanGrid {
    double start = 0.0;  // m
    double step = 26e-9;
    int count = 41;

    void validate() const {
        if (!(step > 0.0)) throw ValidationError("scan.step must be > 0");
        if (count < 6) throw ValidationError("scan.count must be >= 6");
    }

    std::vector<double> positions() const {
        validate();
        std::vector<double> out(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = start + step * i;
        return out;
    }
};

/// Counts versus G3 position at one deflection voltage. Counts are integers
/// for Poisson-sampled scans; noiseless scans carry the exact expectation.
struct FringeScan {
    double voltage = 0.0;
    std::vector<double> positions;  // m, strictly increasing
    std::vector<double> counts;
    double integration_time_per_point = 1.0;  // s
    std::string molecule_name;
    std::uint64_t seed = 0;
    bool is_reference = false;

    void validate() const {
        if (positions.size() != counts.size()) throw ValidationError("scan: positions and counts differ in length");
        for (std::size_t i = 1; i < positions.size(); ++i)
            if (!(positions[i] > positions[i - 1])) throw ValidationError("scan: positions must be strictly increasing");
        for (double c : counts)
            if (!(c >= 0.0)) throw ValidationError("scan: counts must be non-negative");
    }
};

/// Signal scan at U with its interleaved reference scan at U_ref.
struct ScanPair {
    FringeScan signal;
    FringeScan reference;
};

/// Independent per-scan seed derived from the master seed, so scans can be
/// produced in any order or concurrently with identical output.
inline std::uint64_t derive_stream_seed(std::uint64_t master_seed, std::uint32_t voltage_index, bool is_reference) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                      voltage_index, is_reference ? 1u : 0u, 0x4b44544cu};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct SynthesisOptions {
    bool poisson_noise = true;
    QuadratureControl quadrature{};
};

inline FringeScan synthesize_scan(const MoleculeSpec& molecule, const GratingSet& gratings,
                                  const DeflectorConfig& deflector, const VelocityDistribution& vdist,
                                  double voltage, const std::vector<double>& scan_grid, double rate_scale,
                                  double integration_time, std::uint64_t seed, const SynthesisOptions& options = {}) {
    if (scan_grid.empty()) throw ValidationError("synthesize_scan: empty scan grid");
    if (!(rate_scale > 0.0)) throw ValidationError("synthesize_scan: rate_scale must be > 0");
    if (!(integration_time > 0.0)) throw ValidationError("synthesize_scan: integration_time must be > 0");

    const EffectiveFringe eff = effective_fringe_parameters(molecule, gratings, deflector, vdist, voltage,
                                                            molecule.chi_true_A3, options.quadrature);
    FringeScan scan;
    scan.voltage = voltage;
    scan.positions = scan_grid;
    scan.integration_time_per_point = integration_time;
    scan.molecule_name = molecule.name;
    scan.seed = seed;

    std::mt19937_64 engine(seed);
    const double scale = rate_scale * integration_time;
    const double k = 2.0 * constants::pi / gratings.period_d;
    scan.counts.reserve(scan_grid.size());
    for (double x : scan_grid) {
        const double mu = std::max(0.0, scale * (eff.offset + eff.amplitude * std::sin(k * (x - eff.shift))));
        if (!options.poisson_noise) {
            scan.counts.push_back(mu);
        } else if (mu <= 0.0) {
            scan.counts.push_back(0.0);
        } else {
            std::poisson_distribution<long long> draw(mu);
            scan.counts.push_back(static_cast<double>(draw(engine)));
        }
    }
    scan.validate();
    return scan;
}

struct StaircaseSpec {
    std::vector<double> voltages;
    double ref_voltage = 1000.0;
    ScanGrid grid{};
    double rate_scale = 1000.0;
    double integration_time = 1.0;
    std::uint64_t master_seed = 1;
    SynthesisOptions synthesis{};
    /// Worker threads; output does not depend on it.
    unsigned threads = 1;
};

/// One (signal, reference) pair per voltage, each scan on its own seed stream.
inline std::vector<ScanPair> simulate_staircase(const MoleculeSpec& molecule, const GratingSet& gratings,
                                                const DeflectorConfig& deflector, const VelocityDistribution& vdist,
                                                const StaircaseSpec& spec) {
    const std::vector<double> grid = spec.grid.positions();
    auto make_pair = [&](std::size_t i) {
        const auto idx = static_cast<std::uint32_t>(i);
        ScanPair p;
        p.signal = synthesize_scan(molecule, gratings, deflector, vdist, spec.voltages[i], grid, spec.rate_scale,
                                   spec.integration_time, derive_stream_seed(spec.master_seed, idx, false),
                                   spec.synthesis);
        p.reference = synthesize_scan(molecule, gratings, deflector, vdist, spec.ref_voltage, grid, spec.rate_scale,
                                      spec.integration_time, derive_stream_seed(spec.master_seed, idx, true),
                                      spec.synthesis);
        p.reference.is_reference = true;
        return p;
    };

    std::vector<ScanPair> out(spec.voltages.size());
    if (spec.threads <= 1) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = make_pair(i);
        return out;
    }
    std::vector<std::future<ScanPair>> pending;
    for (std::size_t i = 0; i < out.size(); ++i) pending.push_back(std::async(std::launch::async, make_pair, i));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pending[i].get();
    return out;
}

} // namespace kdtl
