#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "kdtl/error.hpp"
#include "kdtl/fringe_model.hpp"
#include "kdtl/matter_wave.hpp"
#include "kdtl/quadrature.hpp"
#include "kdtl/units.hpp"

namespace kdtl {

struct OracleOptions {
    /// Gauss-Legendre nodes across each open slit of G1.
    unsigned source_nodes_per_slit = 12;
    /// Samples of the density over one period at the G3 plane.
    unsigned screen_points = 64;
    /// Fresnel zones sqrt(lambda L) of margin around the diffraction orders,
    /// half of them flat and half in the smooth taper.
    double window_zones = 12.0;
    /// Worker threads over source slits. The result does not depend on it.
    unsigned threads = 1;
    /// Replaces the laser-derived phi0; 0 turns G2 into a fully open plane.
    std::optional<double> phi0_override;
};

namespace detail {

// C-infinity step from 0 (t <= 0) to 1 (t >= 1).
inline double smooth_step(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    const double a = std::exp(-1.0 / t);
    const double b = std::exp(-1.0 / (1.0 - t));
    return a / (a + b);
}

} // namespace detail

/// Brute-force Talbot-Lau pattern by coherent Fresnel summation.
///
/// Every G1 source point radiates a paraxial cylindrical wave; the field at
/// each screen point x3 is the trapezoid sum over x2 of
/// exp(i pi [(x2-x1)^2 + (x3-x2)^2] / (lambda L) + i phi0 cos^2(pi x2/d)),
/// taken on a tapered window centred on (x1+x3)/2. Intensities of the source
/// points add incoherently. The period-averaged density is then integrated
/// through the G3 opening and projected onto the first harmonic.
///
/// G1 spans slits -N..N with the two outermost slits at half weight, which
/// reproduces the periodic average of an extended incoherent source.
/// Slit contributions are combined by pairwise summation in slit order, so
/// any thread count gives bit-identical output.
inline FringeCoefficients numerical_oracle_fringe(const MoleculeSpec& molecule, const GratingSet& gratings,
                                                  double velocity, int slits_per_side, int samples,
                                                  const OracleOptions& options = {}) {
    if (slits_per_side < 5)
        throw ConfigurationError("numerical_oracle_fringe: slits_per_side must be >= 5");
    if (samples < 1000) throw ConfigurationError("numerical_oracle_fringe: samples must be >= 1000");
    if (options.screen_points < 8 || options.source_nodes_per_slit < 1)
        throw ConfigurationError("numerical_oracle_fringe: need >= 8 screen points and >= 1 source node");
    gratings.validate();

    const double d = gratings.period_d;
    const double L = gratings.spacing_L;
    const double lambda = de_broglie_wavelength(molecule.mass_amu, velocity);
    const double phi0 = options.phi0_override ? *options.phi0_override
                                              : phase_grating_modulation(molecule, gratings, velocity);
    const double a = constants::pi / (lambda * L);
    const double fresnel = std::sqrt(lambda * L);

    // Diffraction order k of G2 displaces the stationary point by k lambda L/(2d);
    // orders beyond |phi0|/2 + 6 carry negligible weight.
    const double order_reach = (std::abs(phi0) / 2.0 + 6.0) * lambda * L / (2.0 * d);
    const double flat = order_reach + 0.5 * options.window_zones * fresnel;
    const double taper = 0.5 * options.window_zones * fresnel;
    const double half_width = flat + taper;
    const double h = 2.0 * half_width / (samples - 1);

    const double omega_max = 4.0 * a * half_width + std::abs(phi0) * constants::pi / d;
    if (h * omega_max >= constants::pi) {
        const double needed = 2.0 * half_width * omega_max / constants::pi + 1.0;
        std::ostringstream msg;
        msg << "numerical_oracle_fringe: " << samples << " samples under-resolve the Fresnel chirp (lambda_dB = "
            << lambda << " m, window = " << 2.0 * half_width << " m); need more than "
            << static_cast<long long>(std::ceil(needed)) << " samples";
        throw ConfigurationError(msg.str());
    }

    std::vector<double> u(static_cast<std::size_t>(samples));
    std::vector<double> tau(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) {
        u[k] = -half_width + h * static_cast<double>(k);
        const double edge = (half_width - std::abs(u[k])) / taper;
        tau[k] = h * detail::smooth_step(edge);
    }

    const unsigned screen = options.screen_points;
    std::vector<double> x3(screen);
    for (unsigned m = 0; m < screen; ++m) x3[m] = d * m / screen;

    const QuadratureRule nodes =
        gauss_legendre(options.source_nodes_per_slit, -0.5 * gratings.open_fraction_g1 * d,
                       0.5 * gratings.open_fraction_g1 * d);

    auto field_at = [&](double x1, double xs, double phase_scale) {
        const double centre = 0.5 * (x1 + xs);
        std::complex<double> acc{0.0, 0.0};
        for (std::size_t k = 0; k < u.size(); ++k) {
            if (tau[k] == 0.0) continue;
            const double x2 = centre + u[k];
            const double c = std::cos(constants::pi * x2 / d);
            const double phase = a * ((x2 - x1) * (x2 - x1) + (xs - x2) * (xs - x2)) + phase_scale * phi0 * c * c;
            acc += tau[k] * std::polar(1.0, phase);
        }
        return acc;
    };

    const int slit_count = 2 * slits_per_side + 1;
    std::vector<std::vector<double>> partial(static_cast<std::size_t>(slit_count), std::vector<double>(screen, 0.0));

    auto run_slit = [&](int idx) {
        const int j = idx - slits_per_side;
        const double slit_weight = (j == -slits_per_side || j == slits_per_side) ? 0.5 : 1.0;
        auto& out = partial[static_cast<std::size_t>(idx)];
        for (std::size_t n = 0; n < nodes.nodes.size(); ++n) {
            const double x1 = j * d + nodes.nodes[n];
            const double w = slit_weight * nodes.weights[n];
            for (unsigned m = 0; m < screen; ++m) out[m] += w * std::norm(field_at(x1, x3[m], 1.0));
        }
    };

    const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(slit_count)));
    if (threads == 1) {
        for (int idx = 0; idx < slit_count; ++idx) run_slit(idx);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                for (int idx = static_cast<int>(t); idx < slit_count; idx += static_cast<int>(threads)) run_slit(idx);
            });
        }
        for (auto& th : pool) th.join();
    }

    std::vector<double> density(screen);
    std::vector<double> column(static_cast<std::size_t>(slit_count));
    for (unsigned m = 0; m < screen; ++m) {
        for (int idx = 0; idx < slit_count; ++idx) column[static_cast<std::size_t>(idx)] = partial[static_cast<std::size_t>(idx)][m];
        density[m] = pairwise_sum<double>(column);
    }

    // Normalise to a fully open source of the same extent seen through free space.
    const double free_intensity = std::norm(field_at(0.0, 0.0, 0.0));
    const double source_extent = 2.0 * slits_per_side * d;
    for (double& v : density) v /= source_extent * free_intensity;

    std::complex<double> dc{0.0, 0.0};
    std::complex<double> first{0.0, 0.0};
    for (unsigned m = 0; m < screen; ++m) {
        dc += density[m];
        first += density[m] * std::polar(1.0, -2.0 * constants::pi * m / screen);
    }
    dc /= static_cast<double>(screen);
    first /= static_cast<double>(screen);

    // Flux through the G3 opening [xs - f3 d/2, xs + f3 d/2] of the
    // trigonometric interpolant: the harmonic e^{2 pi i n x/d} integrates to
    // d sin(pi n f3)/(pi n) e^{2 pi i n xs/d}; divide by d for a per-period rate.
    const double f3 = gratings.open_fraction_g3;
    const double open_mean = f3;
    const double open_first = std::sin(constants::pi * f3) / constants::pi;

    FringeCoefficients out;
    out.offset_O = dc.real() * open_mean;
    const double amplitude = 2.0 * std::abs(first) * open_first;
    out.visibility_V = out.offset_O > 0.0 ? std::clamp(amplitude / out.offset_O, 0.0, 1.0) : 0.0;
    out.amplitude_A = out.visibility_V * out.offset_O;
    return out;
}

} // namespace kdtl
