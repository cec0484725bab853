#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kdtl/error.hpp"
#include "kdtl/quadrature.hpp"

namespace kdtl {

enum class VelocityKind { gaussian, histogram };

struct VelocityBin {
    double velocity = 0.0;  // m/s
    double weight = 0.0;
};

/// Longitudinal velocity distribution p(v). The gaussian kind is described by
/// its mean and FWHM fraction and is integrated over +-3 sigma, truncated at
/// v <= 0; the histogram kind is a list of (velocity, weight) bins.
struct VelocityDistribution {
    VelocityKind kind = VelocityKind::gaussian;
    double v_mean = 0.0;
    double fwhm_fraction = 0.0;
    std::vector<VelocityBin> bins;

    static VelocityDistribution gaussian(double v_mean, double fwhm_fraction) {
        VelocityDistribution d;
        d.kind = VelocityKind::gaussian;
        d.v_mean = v_mean;
        d.fwhm_fraction = fwhm_fraction;
        d.validate();
        return d;
    }

    /// Weights are normalised to unit sum.
    static VelocityDistribution histogram(std::vector<VelocityBin> bins) {
        VelocityDistribution d;
        d.kind = VelocityKind::histogram;
        d.bins = std::move(bins);
        double total = 0.0;
        for (const auto& b : d.bins) {
            if (!(b.velocity > 0.0)) throw ValidationError("velocity histogram: bin velocities must be > 0");
            if (!(b.weight >= 0.0)) throw ValidationError("velocity histogram: weights must be non-negative");
            total += b.weight;
        }
        if (!(total > 0.0)) throw ValidationError("velocity histogram: weights must not all be zero");
        double mean = 0.0;
        for (auto& b : d.bins) {
            b.weight /= total;
            mean += b.weight * b.velocity;
        }
        d.v_mean = mean;
        return d;
    }

    /// Single velocity; a one-bin histogram.
    static VelocityDistribution monochromatic(double v) { return histogram({{v, 1.0}}); }

    void validate() const {
        if (kind == VelocityKind::gaussian) {
            if (!(v_mean > 0.0)) throw ValidationError("velocity.v_mean must be > 0");
            if (!(fwhm_fraction > 0.0 && fwhm_fraction < 1.0))
                throw ValidationError("velocity.fwhm_fraction must lie in (0, 1)");
        } else {
            if (bins.empty()) throw ValidationError("velocity histogram: no bins");
            if (!(v_mean > 0.0)) throw ValidationError("velocity histogram: mean must be > 0");
        }
    }

    double sigma() const {
        return kind == VelocityKind::gaussian ? fwhm_fraction * v_mean / (2.0 * std::sqrt(2.0 * std::log(2.0))) : 0.0;
    }

    /// Discrete rule (v_i, w_i) with sum w_i = 1. `nodes` applies to the
    /// gaussian kind only; histograms return their bins.
    QuadratureRule rule(unsigned nodes = 64) const {
        validate();
        QuadratureRule out;
        if (kind == VelocityKind::histogram) {
            for (const auto& b : bins) {
                out.nodes.push_back(b.velocity);
                out.weights.push_back(b.weight);
            }
            return out;
        }
        const double s = sigma();
        const double lo = std::max(v_mean - 3.0 * s, 0.0);
        const double hi = v_mean + 3.0 * s;
        QuadratureRule gl = gauss_legendre(nodes, lo, hi);
        double total = 0.0;
        for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
            const double z = (gl.nodes[i] - v_mean) / s;
            gl.weights[i] *= std::exp(-0.5 * z * z);
            total += gl.weights[i];
        }
        for (double& w : gl.weights) w /= total;
        return gl;
    }

    /// Same distribution with every velocity multiplied by `factor`.
    VelocityDistribution scaled(double factor) const {
        VelocityDistribution out = *this;
        out.v_mean *= factor;
        for (auto& b : out.bins) b.velocity *= factor;
        return out;
    }
};

inline std::string to_string(VelocityKind k) { return k == VelocityKind::gaussian ? "gaussian" : "histogram"; }

} // namespace kdtl
