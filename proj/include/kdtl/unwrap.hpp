#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "kdtl/error.hpp"
#include "kdtl/fit.hpp"

namespace kdtl {

/// Expected differential shift with its uncertainty, used to pick a branch.
struct ShiftPrior {
    double predicted = 0.0;
    double sigma = 0.0;
};

/// Fringe displacement at U relative to the reference scan.
struct DifferentialShift {
    double delta_shift = 0.0;
    double sigma = 0.0;
    /// The prior could not separate the nearest branch from its neighbour.
    bool ambiguous = false;
    /// Runner-up branch, populated when ambiguous.
    std::optional<double> alternate;
};

namespace detail {

inline void require_same_period(const FringeFit& a, const FringeFit& b) {
    if (!(a.period_d > 0.0) || std::abs(a.period_d - b.period_d) > 1e-12 * a.period_d)
        throw ValidationError("differential_shift: fits must share the same period");
}

} // namespace detail

/// dx3(U) - dx3(U_ref), wrapped into (-d/2, d/2] or, given a prior, moved to
/// the branch nearest the prediction. The result is ambiguous when the
/// prediction sits within one combined sigma of the midpoint between the two
/// nearest branches.
inline DifferentialShift differential_shift(const FringeFit& fit_U, const FringeFit& fit_ref,
                                            const std::optional<ShiftPrior>& prior = std::nullopt) {
    detail::require_same_period(fit_U, fit_ref);
    const double d = fit_U.period_d;
    DifferentialShift out;
    out.delta_shift = wrap_to_period(fit_U.phase_shift_dx3 - fit_ref.phase_shift_dx3, d);
    out.sigma = std::hypot(fit_U.sigma_shift(), fit_ref.sigma_shift());
    if (!prior) return out;

    const double raw = out.delta_shift;
    const double best = raw + d * std::round((prior->predicted - raw) / d);
    const double second = best + (prior->predicted >= best ? d : -d);
    out.delta_shift = best;
    const double combined = std::hypot(out.sigma, prior->sigma);
    if (std::abs(second - prior->predicted) - std::abs(best - prior->predicted) < 2.0 * combined) {
        out.ambiguous = true;
        out.alternate = second;
    }
    return out;
}

struct StaircasePoint {
    double voltage = 0.0;
    FringeFit signal;
    FringeFit reference;
};

/// Unwraps differential shifts across a voltage staircase using
/// dx = c (U^2 - U_ref^2). Points are visited in order of increasing
/// |U^2 - U_ref^2|; the first one is taken on the principal branch, and each
/// later one on the branch nearest the weighted fit of c through the points
/// already accepted. Output order matches the input.
inline std::vector<DifferentialShift> unwrap_staircase(const std::vector<StaircasePoint>& points, double ref_voltage) {
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto lever = [&](std::size_t i) { return points[i].voltage * points[i].voltage - ref_voltage * ref_voltage; };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(lever(a)) < std::abs(lever(b)); });

    std::vector<DifferentialShift> out(points.size());
    double sxx = 0.0;
    double sxy = 0.0;
    bool seeded = false;
    for (std::size_t i : order) {
        const auto& p = points[i];
        const double x = lever(i);
        if (!seeded) {
            out[i] = differential_shift(p.signal, p.reference);
        } else {
            const double slope = sxy / sxx;
            const double slope_sigma = 1.0 / std::sqrt(sxx);
            out[i] = differential_shift(p.signal, p.reference, ShiftPrior{slope * x, slope_sigma * std::abs(x)});
        }
        if (x != 0.0 && out[i].sigma > 0.0) {
            const double w = 1.0 / (out[i].sigma * out[i].sigma);
            sxx += w * x * x;
            sxy += w * x * out[i].delta_shift;
            seeded = true;
        }
    }
    return out;
}

} // namespace kdtl
