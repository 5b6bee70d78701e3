// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: random tensors and the central finite-difference
// oracle every gradient test checks against. The oracle never calls any
// backward code; it re-runs forwards at perturbed coordinates.

#pragma once

#include <functional>
#include <random>

#include "granite/granite.hpp"

namespace testutil {

inline granite::Tensor random_tensor(granite::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
    granite::Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

/// Relative error with an absolute floor so near-zero gradients compare
/// sanely.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

/// Central finite difference of scalar() with respect to *coord.
inline double fd_derivative(double* coord, const std::function<double()>& scalar,
                            double h = 1e-5) {
    const double orig = *coord;
    *coord = orig + h;
    const double up = scalar();
    *coord = orig - h;
    const double down = scalar();
    *coord = orig;
    return (up - down) / (2.0 * h);
}

/// Checks every coordinate of `analytic` against finite differences of
/// `scalar` as the matching coordinate of `storage` is perturbed. Returns
/// the worst relative error.
inline double fd_check_tensor(granite::Tensor& storage, const granite::Tensor& analytic,
                              const std::function<double()>& scalar, double h = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < storage.size(); ++i) {
        const double numeric = fd_derivative(&storage[i], scalar, h);
        worst = std::max(worst, rel_err(analytic[i], numeric));
    }
    return worst;
}

/// Weighted-sum head turning a tensor output into a scalar, with fixed
/// random weights so the full Jacobian is exercised through one VJP.
struct SumHead {
    granite::Tensor weights;

    explicit SumHead(const granite::Shape& out_shape, std::mt19937_64& rng)
        : weights(random_tensor(out_shape, rng, 0.2, 1.0)) {}

    double operator()(const granite::Tensor& out) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += weights[i] * out[i];
        return acc;
    }
};

}  // namespace testutil
