#pragma once

#include <string>
#include <vector>

#include "kdtl/error.hpp"
#include "kdtl/units.hpp"

namespace kdtl {

/// One class of thermally activated dipoles: magnitude and how many of them.
struct DipoleComponent {
    double dipole_debye = 0.0;
    double multiplicity = 1.0;
};

/// The species under test. Polarizabilities are volumes in A^3 x 4 pi eps0.
struct MoleculeSpec {
    std::string name;
    double mass_amu = 0.0;
    double alpha_stat_A3 = 0.0;
    double alpha_opt_A3 = 0.0;
    /// Ground-truth susceptibility used by the forward simulator.
    double chi_true_A3 = 0.0;
    std::vector<DipoleComponent> dipole_model;
    double internal_temperature_K = 0.0;

    void validate() const {
        if (!(mass_amu > 0.0)) throw ValidationError("molecule.mass_amu must be > 0");
        if (!(alpha_stat_A3 >= 0.0)) throw ValidationError("molecule.alpha_stat_A3 must be >= 0");
        if (!(alpha_opt_A3 >= 0.0)) throw ValidationError("molecule.alpha_opt_A3 must be >= 0");
        if (!(chi_true_A3 >= 0.0)) throw ValidationError("molecule.chi_true_A3 must be >= 0");
        for (const auto& c : dipole_model) {
            if (!(c.dipole_debye >= 0.0) || !(c.multiplicity >= 0.0))
                throw ValidationError("molecule.dipole_model entries must be non-negative");
        }
        if (!dipole_model.empty() && internal_temperature_K > 0.0 && chi_true_A3 < alpha_stat_A3)
            throw ValidationError("molecule.chi_true_A3 must be >= alpha_stat_A3 when a dipole model is present");
    }
};

/// de Broglie wavelength h/(m v) in metres.
inline double de_broglie_wavelength(double mass_amu, double velocity) {
    detail::require_domain(mass_amu > 0.0, "de_broglie_wavelength: mass must be > 0");
    detail::require_domain(velocity > 0.0, "de_broglie_wavelength: velocity must be > 0");
    return constants::planck_h / (units::amu_to_kg(mass_amu) * velocity);
}

/// Near-field self-imaging distance d^2 / lambda.
inline double talbot_length(double grating_period, double wavelength) {
    detail::require_domain(grating_period > 0.0 && wavelength > 0.0,
                           "talbot_length: period and wavelength must be > 0");
    return grating_period * grating_period / wavelength;
}

} // namespace kdtl
