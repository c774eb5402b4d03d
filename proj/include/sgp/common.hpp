#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgp {

// Error taxonomy, mapped to CLI exit codes: config -> 2, numeric -> 3, io -> 4.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Dense row-major tensor of 64-bit floats. Everything in the pipeline is
// effectively 2-D (rows x cols); vectors are 1 x n, scalars 1 x 1.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c) : shape{r, c}, values(r * c, 0.0) {}

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(r, c); }
    static Tensor full(std::size_t r, std::size_t c, double v) {
        Tensor t(r, c);
        std::fill(t.values.begin(), t.values.end(), v);
        return t;
    }
    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.values[0] = v;
        return t;
    }
    static Tensor row(std::vector<double> v) {
        Tensor t;
        t.shape = {1, v.size()};
        t.values = std::move(v);
        return t;
    }

    std::size_t size() const { return values.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 0 : shape[1]; }

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : values) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b)) {
        throw shape_error(std::string(where) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
    }
}

inline double squared_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return s;
}

inline double norm(const std::vector<double>& v) { return std::sqrt(squared_norm(v)); }

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

}  // namespace sgp
