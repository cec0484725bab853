#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "kdtl/error.hpp"
#include "kdtl/matter_wave.hpp"
#include "kdtl/units.hpp"

namespace kdtl {

struct DipoleSample {
    double dipole_debye = 0.0;
    double weight = 0.0;
};

/// Thermal population of dipole magnitudes at one temperature.
struct DipoleEnsemble {
    std::vector<DipoleSample> samples;
    double temperature_K = 0.0;

    /// Weights are normalised to unit sum; an empty list means no dipole.
    static DipoleEnsemble make(std::vector<DipoleSample> samples, double temperature_K) {
        detail::require_domain(temperature_K > 0.0, "DipoleEnsemble: temperature must be > 0");
        double total = 0.0;
        for (const auto& s : samples) {
            detail::require_domain(s.weight >= 0.0 && s.dipole_debye >= 0.0,
                                   "DipoleEnsemble: weights and magnitudes must be non-negative");
            total += s.weight;
        }
        if (!samples.empty()) {
            detail::require_domain(total > 0.0, "DipoleEnsemble: weights must not all be zero");
            for (auto& s : samples) s.weight /= total;
        }
        return {std::move(samples), temperature_K};
    }

    /// <d^2> in C^2 m^2.
    double mean_square_dipole_si() const {
        double acc = 0.0;
        for (const auto& s : samples) {
            const double d = units::debye_to_si(s.dipole_debye);
            acc += s.weight * d * d;
        }
        return acc;
    }
};

/// Uncorrelated dipoles add in <d^2>: sum of multiplicity * d^2, as a single
/// effective magnitude at the molecule's internal temperature.
inline DipoleEnsemble ensemble_from_molecule(const MoleculeSpec& molecule) {
    double sum_sq = 0.0;
    for (const auto& c : molecule.dipole_model) sum_sq += c.multiplicity * c.dipole_debye * c.dipole_debye;
    if (sum_sq == 0.0) return DipoleEnsemble::make({}, molecule.internal_temperature_K);
    return DipoleEnsemble::make({{std::sqrt(sum_sq), 1.0}}, molecule.internal_temperature_K);
}

/// <d^2>/(3 k_B T) in A^3 x 4 pi eps0.
inline double dipole_term_A3(const DipoleEnsemble& ensemble) {
    detail::require_domain(ensemble.temperature_K > 0.0, "chi_total: temperature must be > 0");
    return units::si_to_A3(ensemble.mean_square_dipole_si() / (3.0 * constants::boltzmann_kB * ensemble.temperature_K));
}

/// van Vleck total susceptibility alpha_stat + <d^2>/(3 k_B T).
inline double chi_total(double alpha_stat_A3, const DipoleEnsemble& ensemble) {
    detail::require_domain(alpha_stat_A3 >= 0.0, "chi_total: alpha_stat must be >= 0");
    return alpha_stat_A3 + dipole_term_A3(ensemble);
}

/// RMS dipole [Debye] whose thermal term equals `term_A3` at temperature T.
inline double dipole_rms_for_term(double term_A3, double temperature_K) {
    detail::require_domain(term_A3 >= 0.0 && temperature_K > 0.0, "dipole_rms_for_term: invalid arguments");
    const double d2 = units::A3_to_si(term_A3) * 3.0 * constants::boltzmann_kB * temperature_K;
    return units::si_to_debye(std::sqrt(d2));
}

struct Interval {
    double low = 0.0;
    double high = 0.0;

    bool overlaps(const Interval& other) const { return low <= other.high && other.low <= high; }
    bool contains(double x) const { return low <= x && x <= high; }
};

/// Thermal contribution bracketed by n chains of [low, high] each.
inline Interval side_chain_budget(int chain_count, double per_chain_low_A3, double per_chain_high_A3) {
    detail::require_domain(chain_count >= 0, "side_chain_budget: chain count must be >= 0");
    detail::require_domain(per_chain_low_A3 >= 0.0 && per_chain_low_A3 <= per_chain_high_A3,
                           "side_chain_budget: need 0 <= low <= high");
    return {chain_count * per_chain_low_A3, chain_count * per_chain_high_A3};
}

struct VanVleckConsistency {
    /// Measured chi minus computed alpha, both with their 1-sigma errors.
    Interval excess;
    Interval budget;
    bool consistent = false;
};

/// Compares the measured excess chi - alpha_stat against a side-chain budget.
inline VanVleckConsistency van_vleck_consistency(double chi_measured, double chi_sigma, double alpha_stat,
                                                 double alpha_sigma, const Interval& budget) {
    VanVleckConsistency out;
    out.excess = {chi_measured - chi_sigma - (alpha_stat + alpha_sigma),
                  chi_measured + chi_sigma - (alpha_stat - alpha_sigma)};
    out.budget = budget;
    out.consistent = out.excess.overlaps(budget);
    return out;
}

} // namespace kdtl
