#pragma once

#include <algorithm>
#include <cmath>

#include "kdtl/error.hpp"
#include "kdtl/matter_wave.hpp"
#include "kdtl/units.hpp"

namespace kdtl {

/// Three-grating geometry: absorptive masks G1 and G3 sharing the period of
/// the standing-wave phase grating G2. All lengths in metres, power in watts.
struct GratingSet {
    double period_d = 266e-9;
    double open_fraction_g1 = 100.0 / 266.0;
    double open_fraction_g3 = 100.0 / 266.0;
    /// G1->G2 and G2->G3 distance.
    double spacing_L = 0.105;
    double laser_wavelength = 532e-9;
    double laser_power = 1.0;
    /// Vertical 1/e^2 radius of the standing-wave beam.
    double laser_waist = 500e-6;

    void validate() const {
        auto open_ok = [](double f) { return f > 0.0 && f < 1.0; };
        if (!open_ok(open_fraction_g1) || !open_ok(open_fraction_g3))
            throw ValidationError("gratings: open fractions must lie in (0, 1)");
        if (!(period_d > 0.0)) throw ValidationError("gratings.period_d must be > 0");
        if (!(spacing_L > 0.0)) throw ValidationError("gratings.spacing_L must be > 0");
        if (!(laser_wavelength > 0.0)) throw ValidationError("gratings.laser_wavelength must be > 0");
        if (!(laser_power > 0.0)) throw ValidationError("gratings.laser_power must be > 0");
        if (!(laser_waist > 0.0)) throw ValidationError("gratings.laser_waist must be > 0");
    }
};

/// First-harmonic description of the detected signal O + A sin(...).
struct FringeCoefficients {
    double offset_O = 0.0;
    double amplitude_A = 0.0;
    double visibility_V = 0.0;
};

/// Fourier coefficient c_n of a binary 0/1 mask with the given open
/// fraction, slit centred at the origin.
inline double binary_grating_fourier_coefficient(double open_fraction, int order) {
    detail::require_domain(open_fraction > 0.0 && open_fraction < 1.0,
                           "binary_grating_fourier_coefficient: open fraction must lie in (0, 1)");
    if (order == 0) return open_fraction;
    const double n_pi = order * constants::pi;
    return std::sin(n_pi * open_fraction) / n_pi;
}

// Eikonal phase of a retro-reflected Gaussian beam. The standing-wave peak
// intensity is 8P/(pi w_y w_z); the dipole potential alpha I/(2 eps0 c)
// integrated along the flight path over the w_z Gaussian gives
// phi0 = 4/sqrt(2 pi) * alpha P / (eps0 hbar c w_y v), independent of w_z.
inline constexpr double phase_grating_prefactor = 4.0 / 2.5066282746310002;  // 4/sqrt(2 pi)

/// Peak phase phi0 of the profile phi0 cos^2(pi x / d) imprinted by G2.
inline double phase_grating_modulation(const MoleculeSpec& molecule, const GratingSet& gratings,
                                       double velocity) {
    detail::require_domain(velocity > 0.0, "phase_grating_modulation: velocity must be > 0");
    const double alpha_si = units::A3_to_si(molecule.alpha_opt_A3);
    return phase_grating_prefactor * alpha_si * gratings.laser_power /
           (constants::vacuum_permittivity * constants::hbar * constants::speed_of_light *
            gratings.laser_waist * velocity);
}

/// Argument of the phase-grating Talbot coefficient, phi0 sin(pi L / L_T).
inline double talbot_argument(double phi0, double spacing_L, double talbot_len) {
    return phi0 * std::sin(constants::pi * spacing_L / talbot_len);
}

/// Offset and signed first-harmonic amplitude at a single velocity. The sign
/// matters when patterns of different velocities are superposed.
struct SignedHarmonic {
    double offset = 0.0;
    double amplitude = 0.0;
};

// Symmetric Talbot-Lau with an incoherent G1: the n-th harmonic of the
// density at G3 is c_n(f1) B_{2n}(n L/L_T). For the phase profile
// phi0 cos^2(pi x/d) the Talbot coefficient is B_m(t) = J_m(phi0 sin(pi t)),
// so the mean flux is f1 f3 and the fringe term carries J_2.
inline SignedHarmonic signed_first_harmonic(const MoleculeSpec& molecule, const GratingSet& gratings,
                                            double velocity) {
    const double lambda = de_broglie_wavelength(molecule.mass_amu, velocity);
    const double lt = talbot_length(gratings.period_d, lambda);
    const double phi0 = phase_grating_modulation(molecule, gratings, velocity);
    const double xi = talbot_argument(phi0, gratings.spacing_L, lt);
    const double c0_1 = binary_grating_fourier_coefficient(gratings.open_fraction_g1, 0);
    const double c0_3 = binary_grating_fourier_coefficient(gratings.open_fraction_g3, 0);
    const double c1_1 = binary_grating_fourier_coefficient(gratings.open_fraction_g1, 1);
    const double c1_3 = binary_grating_fourier_coefficient(gratings.open_fraction_g3, 1);
    return {c0_1 * c0_3, 2.0 * c1_1 * c1_3 * std::cyl_bessel_j(2.0, std::abs(xi))};
}

/// Single-velocity fringe behind G3, truncated at the first harmonic.
inline FringeCoefficients analytic_fringe(const MoleculeSpec& molecule, const GratingSet& gratings,
                                          double velocity) {
    const SignedHarmonic h = signed_first_harmonic(molecule, gratings, velocity);
    FringeCoefficients out;
    out.offset_O = h.offset;
    out.visibility_V = h.offset > 0.0 ? std::clamp(std::abs(h.amplitude) / h.offset, 0.0, 1.0) : 0.0;
    out.amplitude_A = out.visibility_V * out.offset_O;
    return out;
}

} // namespace kdtl
