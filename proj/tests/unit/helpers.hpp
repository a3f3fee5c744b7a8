#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pheye/tensor.hpp"

namespace testing {

inline pheye::Tensor random_tensor(const pheye::Shape& shape, pheye::Rng& rng, bool grad = true) {
    return pheye::Tensor::randn(shape, rng, 1.0, grad);
}

// ||a - b|| / max(||a||, ||b||, tiny)
inline double rel_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Analytic gradient of `loss(params)` w.r.t. `p` against central differences.
template <typename F>
double grad_check(F&& loss, pheye::Tensor p, double step = 1e-5) {
    p.zero_grad();
    loss().backward();
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) {
        auto g = p.grad();
        analytic.assign(g.begin(), g.end());
    }
    const pheye::Tensor numeric =
        pheye::finite_difference_grad([&](const pheye::Tensor&) { return loss().item(); }, p, step);
    p.zero_grad();
    return rel_error(analytic, numeric.data());
}

}  // namespace testing
