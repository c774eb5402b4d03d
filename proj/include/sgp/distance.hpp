#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgp/dataset.hpp"
#include "sgp/mlp.hpp"
#include "sgp/schedule.hpp"

namespace sgp {

// sigma^2 log N, the offset that makes the smoothed squared distance
// nonnegative for any query.
double default_positivity_offset(double sigma, std::size_t count);

// Smoothed squared distance to the point set:
//   -sigma^2 logsumexp_i(-|z - z_i|^2 / (2 sigma^2)) + C
double softmin_distance_sq(std::span<const double> z, const PointSet& data, double sigma, double c_offset);

// Brute-force nearest neighbor; returns (index, min_i 0.5 |z - z_i|^2).
std::pair<std::size_t, double> nearest_point(std::span<const double> z, const PointSet& data);

// log of the uniform-weight Gaussian mixture centered on the data points.
double perturbed_log_likelihood(std::span<const double> z, const PointSet& data, double sigma);

// Gradient of perturbed_log_likelihood: sum_i w_i(z) (z_i - z) / sigma^2 with
// softmax weights w.
std::vector<double> exact_score(std::span<const double> z, const PointSet& data, double sigma);

struct LipschitzOptions {
    // fraction of pairwise slopes kept; 1.0 keeps the max slope
    double quantile = 1.0;
    double inflation = 1.0;
};

double lipschitz_estimate(const std::vector<std::vector<double>>& points,
                          const std::vector<double>& errors, const LipschitzOptions& opts = {});

// e(x_c) + sqrt(2) L_e sqrt(d_sigma^2(z) + C2) with C2 = sigma^2 log N - C.
double error_bound(std::span<const double> z, const PointSet& data, double sigma, double c_offset,
                   double lipschitz, double error_at_nearest);

struct AnnealedDescentResult {
    std::vector<double> z;
    std::size_t nearest_index = 0;
    double nearest_distance = 0.0;  // euclidean distance to that point
};

// Gradient descent on the smoothed squared distance, annealing sigma down the
// schedule; inner_iters steps per level.
AnnealedDescentResult annealed_descent(std::span<const double> z0, const PointSet& data,
                                       const NoiseSchedule& schedule, std::size_t inner_iters,
                                       double step_size);

// Amortized softmin-distance regressor d_eta(z, sigma).
struct DistanceRegressor {
    Mlp net;  // input (z, sigma), output 1
    double sigma_min = 0.0;
    double sigma_max = 0.0;
    std::size_t dim = 0;

    double eval(std::span<const double> z, double sigma) const;
};

struct DistanceTrainConfig {
    std::vector<std::size_t> hidden{64, 64};
    // the softmin target is piecewise-quadratic with kinks; relu fits it far
    // better than smooth activations
    Activation act = Activation::Relu;
    std::size_t steps = 2000;
    std::size_t batch = 64;
    double lr = 1e-3;
    bool lr_decay = true;  // linear decay to 10% of lr; the L1 loss needs it to settle
    std::uint64_t seed = 0;
    Box domain;  // sampling domain, must cover the data hull
    std::string log_path;
};

DistanceRegressor train_distance_regressor(const PointSet& data, const NoiseSchedule& schedule,
                                           const DistanceTrainConfig& cfg);

}  // namespace sgp
