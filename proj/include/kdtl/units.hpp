#pragma once

#include <numbers>

// Physical constants (CODATA 2018) and the unit conversions used at the
// public boundary. Everything inside the library is SI; configs, CSVs and
// reports use amu, m/s, V, nm and polarizability volumes in A^3 x 4 pi eps0.

namespace kdtl::constants {

inline constexpr double pi = std::numbers::pi;

/// Planck constant [J s] (exact).
inline constexpr double planck_h = 6.62607015e-34;
/// Reduced Planck constant [J s].
inline constexpr double hbar = planck_h / (2.0 * pi);
/// Boltzmann constant [J/K] (exact).
inline constexpr double boltzmann_kB = 1.380649e-23;
/// Unified atomic mass unit [kg].
inline constexpr double atomic_mass_unit = 1.66053906660e-27;
/// Speed of light in vacuum [m/s] (exact).
inline constexpr double speed_of_light = 299792458.0;
/// Vacuum electric permittivity [F/m].
inline constexpr double vacuum_permittivity = 8.8541878128e-12;
/// 1 Debye [C m] = 1e-21 / c.
inline constexpr double debye = 1e-21 / speed_of_light;
/// 1 A^3 x 4 pi eps0 expressed in SI polarizability units [C m^2 / V].
inline constexpr double polarizability_volume_A3 = 4.0 * pi * vacuum_permittivity * 1e-30;

} // namespace kdtl::constants

namespace kdtl::units {

constexpr double amu_to_kg(double m_amu) { return m_amu * constants::atomic_mass_unit; }
constexpr double kg_to_amu(double m_kg) { return m_kg / constants::atomic_mass_unit; }

constexpr double A3_to_si(double alpha_A3) { return alpha_A3 * constants::polarizability_volume_A3; }
constexpr double si_to_A3(double alpha_si) { return alpha_si / constants::polarizability_volume_A3; }

constexpr double debye_to_si(double d_debye) { return d_debye * constants::debye; }
constexpr double si_to_debye(double d_si) { return d_si / constants::debye; }

constexpr double nm_to_m(double x_nm) { return x_nm * 1e-9; }
constexpr double m_to_nm(double x_m) { return x_m * 1e9; }

constexpr double kV_to_V(double u_kV) { return u_kV * 1e3; }
constexpr double V_to_kV(double u_V) { return u_V * 1e-3; }

constexpr double celsius_to_kelvin(double t_C) { return t_C + 273.15; }

} // namespace kdtl::units
