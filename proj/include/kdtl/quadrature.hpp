#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <boost/math/special_functions/legendre.hpp>

#include "kdtl/error.hpp"

namespace kdtl {

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// n-point Gauss-Legendre rule mapped onto [a, b], nodes ascending.
inline QuadratureRule gauss_legendre(unsigned n, double a, double b) {
    detail::require_domain(n >= 1, "gauss_legendre: need at least one node");
    // legendre_p_zeros returns the non-negative roots in ascending order.
    const std::vector<double> half = boost::math::legendre_p_zeros<double>(static_cast<int>(n));
    std::vector<double> x;
    x.reserve(n);
    for (auto it = half.rbegin(); it != half.rend(); ++it) {
        if (*it != 0.0) x.push_back(-*it);
    }
    for (double r : half) x.push_back(r);

    QuadratureRule rule;
    rule.nodes.reserve(n);
    rule.weights.reserve(n);
    const double mid = 0.5 * (a + b);
    const double half_width = 0.5 * (b - a);
    for (double xi : x) {
        const double dp = boost::math::legendre_p_prime(static_cast<int>(n), xi);
        rule.nodes.push_back(mid + half_width * xi);
        rule.weights.push_back(half_width * 2.0 / ((1.0 - xi * xi) * dp * dp));
    }
    return rule;
}

/// Pairwise (cascade) summation with a fixed split order, so the result
/// depends only on the input sequence and not on how it was produced.
template <class T>
T pairwise_sum(std::span<const T> values) {
    if (values.empty()) return T{};
    if (values.size() <= 8) {
        T acc = values[0];
        for (std::size_t i = 1; i < values.size(); ++i) acc += values[i];
        return acc;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

} // namespace kdtl
