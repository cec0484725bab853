#pragma once

#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "kdtl/beamline.hpp"
#include "kdtl/error.hpp"
#include "kdtl/units.hpp"

namespace kdtl {

/// Least-squares fit of S(x) = O + A sin(2 pi (x - dx3)/d) at fixed period d.
struct FringeFit {
    double offset_O = 0.0;
    double amplitude_A = 0.0;
    /// Fringe position in (-d/2, d/2].
    double phase_shift_dx3 = 0.0;
    double visibility_V = 0.0;
    /// Over (O, A, dx3); dx3 in metres.
    std::array<std::array<double, 3>, 3> covariance{};
    double chi_squared_reduced = 0.0;
    double period_d = 0.0;
    /// A below its own standard error.
    bool low_contrast = false;

    double sigma_offset() const { return std::sqrt(covariance[0][0]); }
    double sigma_amplitude() const { return std::sqrt(covariance[1][1]); }
    double sigma_shift() const { return std::sqrt(covariance[2][2]); }
};

/// Maps x into (-period/2, period/2].
inline double wrap_to_period(double x, double period) {
    double r = std::remainder(x, period);
    if (r <= -0.5 * period) r += period;
    return r;
}

/// Poisson-weighted linear least squares in (O, a, b) for
/// O + a sin(kx) + b cos(kx), k = 2 pi/d, with per-point variance
/// max(counts, 1). Then A = |(a, b)| and dx3 = atan2(-b, a)/k, and the
/// covariance is carried through the Jacobian of that map.
inline FringeFit fit_sinusoid(const FringeScan& scan, double period_d) {
    scan.validate();
    const std::size_t n = scan.positions.size();
    if (n < 6) throw ValidationError("fit_sinusoid: need at least 6 points");
    if (!(period_d > 0.0)) throw ValidationError("fit_sinusoid: period must be > 0");
    const double span = scan.positions.back() - scan.positions.front();
    if (span + span / static_cast<double>(n - 1) < period_d * (1.0 - 1e-9))
        throw ValidationError("fit_sinusoid: scan must cover at least one full period");

    const double k = 2.0 * constants::pi / period_d;
    Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 1.0 / std::max(scan.counts[i], 1.0);
        const Eigen::Vector3d row(1.0, std::sin(k * scan.positions[i]), std::cos(k * scan.positions[i]));
        normal.noalias() += w * row * row.transpose();
        rhs.noalias() += w * scan.counts[i] * row;
    }

    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(normal, Eigen::EigenvaluesOnly);
    const Eigen::Vector3d ev = eig.eigenvalues();
    if (!(ev(0) > 1e-12 * ev(2))) throw FitError("fit_sinusoid: rank-deficient design (degenerate scan grid)");

    const Eigen::Matrix3d inverse = normal.inverse();
    const Eigen::Vector3d p = inverse * rhs;
    const double offset = p(0);
    const double a = p(1);
    const double b = p(2);
    const double amplitude = std::hypot(a, b);

    double chi2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double model = offset + a * std::sin(k * scan.positions[i]) + b * std::cos(k * scan.positions[i]);
        const double r = scan.counts[i] - model;
        chi2 += r * r / std::max(scan.counts[i], 1.0);
    }

    FringeFit fit;
    fit.period_d = period_d;
    fit.offset_O = offset;
    fit.amplitude_A = amplitude;
    fit.phase_shift_dx3 = wrap_to_period(std::atan2(-b, a) / k, period_d);
    fit.visibility_V = offset != 0.0 ? amplitude / offset : 0.0;
    fit.chi_squared_reduced = chi2 / static_cast<double>(n - 3);

    Eigen::Matrix3d cov;
    if (amplitude > 0.0) {
        Eigen::Matrix3d jac;
        jac << 1.0, 0.0, 0.0,
               0.0, a / amplitude, b / amplitude,
               0.0, b / (amplitude * amplitude * k), -a / (amplitude * amplitude * k);
        cov = jac * inverse * jac.transpose();
    } else {
        // No phase information at zero amplitude.
        cov = Eigen::Matrix3d::Zero();
        cov(0, 0) = inverse(0, 0);
        cov(1, 1) = 0.5 * (inverse(1, 1) + inverse(2, 2));
        cov(2, 2) = period_d * period_d / 12.0;
    }
    cov = (0.5 * (cov + cov.transpose())).eval();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) fit.covariance[r][c] = cov(r, c);
    fit.low_contrast = amplitude < fit.sigma_amplitude();
    return fit;
}

} // namespace kdtl
