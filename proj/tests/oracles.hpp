#pragma once

// Test-only reference implementations, independent of the library code paths
// they check.

#include <cmath>
#include <functional>
#include <vector>

#include "sgp/common.hpp"
#include "sgp/rng.hpp"

namespace sgp::testing {

// Central finite differences of a scalar function.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// |a - b| / max(|b|, floor), norm-wise.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b,
                        double floor = 1e-10) {
    double diff = 0.0;
    double ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        diff += d * d;
        ref += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

inline double rel_error(double a, double b, double floor = 1e-10) {
    return std::abs(a - b) / std::max(std::abs(b), floor);
}

// Straight-line affine/activation chain, written against the layer math
// directly rather than the library tensors.
inline std::vector<double> naive_mlp_forward(const std::vector<std::size_t>& widths,
                                             const std::vector<double>& params,
                                             const std::vector<double>& input, bool tanh_hidden) {
    std::vector<double> cur = input;
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        std::vector<double> next(out, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            double acc = params[off + in * out + o];  // bias after the weight block
            for (std::size_t i = 0; i < in; ++i) {
                acc += params[off + o * in + i] * cur[i];
            }
            next[o] = acc;
        }
        off += in * out + out;
        if (l + 2 < widths.size() && tanh_hidden) {
            for (double& v : next) v = std::tanh(v);
        }
        cur = next;
    }
    return cur;
}

// Scalar Adam recursion on f(w) = (w - target)^2, run independently.
inline double scalar_adam_on_quadratic(double w0, double target, double lr, int steps,
                                       double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    double w = w0;
    double m = 0.0;
    double v = 0.0;
    for (int t = 1; t <= steps; ++t) {
        const double g = 2.0 * (w - target);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mhat = m / (1.0 - std::pow(b1, t));
        const double vhat = v / (1.0 - std::pow(b2, t));
        w -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    return w;
}

inline void fill_uniform(std::vector<double>& v, Rng& rng, double lo, double hi) {
    for (double& x : v) x = rng.uniform(lo, hi);
}

}  // namespace sgp::testing
