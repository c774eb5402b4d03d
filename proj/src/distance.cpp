#include "sgp/distance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace sgp {

namespace {

// Stable logsumexp over a_i = -|z - z_i|^2 / (2 sigma^2).
double logsumexp_neg_sqdist(std::span<const double> z, const PointSet& data, double sigma) {
    const std::size_t n = data.count();
    const std::size_t d = data.dim;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> a(n);
    double amax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = &data.points.values[i * d];
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = z[j] - p[j];
            sq += c * c;
        }
        a[i] = -sq * inv;
        amax = std::max(amax, a[i]);
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::exp(a[i] - amax);
    return amax + std::log(acc);
}

void require_points(const PointSet& data, std::size_t zdim, double sigma, const char* where) {
    if (data.count() == 0) {
        throw config_error(std::string(where) + ": empty point set");
    }
    if (zdim != data.dim) {
        throw shape_error(std::string(where) + ": query dim mismatch");
    }
    if (!(sigma > 0.0)) {
        throw config_error(std::string(where) + ": sigma must be positive");
    }
}

}  // namespace

double default_positivity_offset(double sigma, std::size_t count) {
    return sigma * sigma * std::log(static_cast<double>(count));
}

double softmin_distance_sq(std::span<const double> z, const PointSet& data, double sigma,
                           double c_offset) {
    require_points(data, z.size(), sigma, "softmin_distance_sq");
    return -sigma * sigma * logsumexp_neg_sqdist(z, data, sigma) + c_offset;
}

std::pair<std::size_t, double> nearest_point(std::span<const double> z, const PointSet& data) {
    std::size_t best = 0;
    double best_sq = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < data.count(); ++i) {
        const auto p = data.point(i);
        double sq = 0.0;
        for (std::size_t j = 0; j < data.dim; ++j) {
            const double c = z[j] - p[j];
            sq += c * c;
        }
        if (sq < best_sq) {
            best_sq = sq;
            best = i;
        }
    }
    return {best, 0.5 * best_sq};
}

double perturbed_log_likelihood(std::span<const double> z, const PointSet& data, double sigma) {
    require_points(data, z.size(), sigma, "perturbed_log_likelihood");
    const double d = static_cast<double>(data.dim);
    return logsumexp_neg_sqdist(z, data, sigma) - std::log(static_cast<double>(data.count())) -
           0.5 * d * std::log(2.0 * kPi * sigma * sigma);
}

std::vector<double> exact_score(std::span<const double> z, const PointSet& data, double sigma) {
    require_points(data, z.size(), sigma, "exact_score");
    const std::size_t n = data.count();
    const std::size_t d = data.dim;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> a(n);
    double amax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double* p = &data.points.values[i * d];
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = z[j] - p[j];
            sq += c * c;
        }
        a[i] = -sq * inv;
        amax = std::max(amax, a[i]);
    }
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = std::exp(a[i] - amax);
        wsum += a[i];
    }
    std::vector<double> score(d, 0.0);
    const double inv_s2 = 1.0 / (sigma * sigma);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = a[i] / wsum;
        if (w == 0.0) continue;
        const double* p = &data.points.values[i * d];
        for (std::size_t j = 0; j < d; ++j) {
            score[j] += w * (p[j] - z[j]) * inv_s2;
        }
    }
    return score;
}

double lipschitz_estimate(const std::vector<std::vector<double>>& points,
                          const std::vector<double>& errors, const LipschitzOptions& opts) {
    if (points.size() < 2 || points.size() != errors.size()) {
        throw config_error("lipschitz_estimate: need >= 2 points with matching errors");
    }
    std::vector<double> slopes;
    slopes.reserve(points.size() * (points.size() - 1) / 2);
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            double sq = 0.0;
            for (std::size_t k = 0; k < points[i].size(); ++k) {
                const double c = points[i][k] - points[j][k];
                sq += c * c;
            }
            const double dist = std::sqrt(sq);
            const double de = std::abs(errors[i] - errors[j]);
            if (dist == 0.0) {
                if (de > 0.0) {
                    throw numeric_error("lipschitz_estimate: duplicate points with differing errors "
                                        "(infinite slope)");
                }
                continue;
            }
            slopes.push_back(de / dist);
        }
    }
    if (slopes.empty()) {
        return 0.0;
    }
    std::sort(slopes.begin(), slopes.end());
    const double q = std::clamp(opts.quantile, 0.0, 1.0);
    const std::size_t idx = std::min(slopes.size() - 1,
                                     static_cast<std::size_t>(q * static_cast<double>(slopes.size() - 1) + 0.5));
    return slopes[idx] * opts.inflation;
}

double error_bound(std::span<const double> z, const PointSet& data, double sigma, double c_offset,
                   double lipschitz, double error_at_nearest) {
    if (lipschitz < 0.0) {
        throw config_error("error_bound: Lipschitz constant must be nonnegative");
    }
    const double c2 = default_positivity_offset(sigma, data.count()) - c_offset;
    double radicand = softmin_distance_sq(z, data, sigma, c_offset) + c2;
    if (radicand < -1e-9) {
        throw numeric_error("error_bound: negative radicand " + std::to_string(radicand));
    }
    radicand = std::max(radicand, 0.0);
    return error_at_nearest + std::sqrt(2.0) * lipschitz * std::sqrt(radicand);
}

AnnealedDescentResult annealed_descent(std::span<const double> z0, const PointSet& data,
                                       const NoiseSchedule& schedule, std::size_t inner_iters,
                                       double step_size) {
    if (data.count() == 0) {
        throw config_error("annealed_descent: empty point set");
    }
    std::vector<double> z(z0.begin(), z0.end());
    for (std::size_t k = 0; k < schedule.levels(); ++k) {
        const double sigma = schedule.sigma(k);
        const double c = default_positivity_offset(sigma, data.count());
        const double start_dist = softmin_distance_sq(z, data, sigma, c);
        for (std::size_t it = 0; it < inner_iters; ++it) {
            const auto s = exact_score(z, data, sigma);
            // grad of d_sigma^2 is -sigma^2 * score
            for (std::size_t j = 0; j < z.size(); ++j) {
                z[j] += step_size * sigma * sigma * s[j];
            }
        }
        const double end_dist = softmin_distance_sq(z, data, sigma, c);
        if (end_dist > 10.0 * std::max(start_dist, 1e-12) && end_dist > 1e-9) {
            throw numeric_error("annealed_descent: diverging at level " + std::to_string(k) +
                                " (distance " + std::to_string(start_dist) + " -> " +
                                std::to_string(end_dist) + "); reduce step size");
        }
    }
    AnnealedDescentResult res;
    const auto [idx, half_sq] = nearest_point(z, data);
    res.z = std::move(z);
    res.nearest_index = idx;
    res.nearest_distance = std::sqrt(2.0 * half_sq);
    return res;
}

double DistanceRegressor::eval(std::span<const double> z, double sigma) const {
    Tensor in(1, dim + 1);
    for (std::size_t j = 0; j < dim; ++j) in.values[j] = z[j];
    in.values[dim] = sigma;
    return net.forward(in).values[0];
}

DistanceRegressor train_distance_regressor(const PointSet& data, const NoiseSchedule& schedule,
                                           const DistanceTrainConfig& cfg) {
    if (cfg.domain.dim() != data.dim) {
        throw config_error("train_distance_regressor: domain dim must match the point set");
    }
    const std::size_t d = data.dim;
    std::vector<std::size_t> widths;
    widths.push_back(d + 1);
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(1);

    DistanceRegressor reg;
    reg.net = mlp_init(widths, cfg.act, cfg.seed);
    reg.sigma_min = schedule.sigma_min();
    reg.sigma_max = schedule.sigma_max();
    reg.dim = d;

    AdamState adam = AdamState::make(reg.net.params.size(), cfg.lr);
    Rng rng(cfg.seed, /*stream=*/0xd157);

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        log << "step,loss,step_ms,n_points\n";
    }

    // The objective weights residuals by 1/sigma^2 under uniform sigma. Drawing
    // sigma from q(sigma) ~ 1/sigma^2 instead makes the importance-corrected
    // per-sample weight constant, which estimates the same objective with far
    // less gradient variance.
    const double inv_lo = 1.0 / reg.sigma_max;
    const double inv_hi = 1.0 / reg.sigma_min;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.lr_decay) {
            const double frac = static_cast<double>(step) / static_cast<double>(cfg.steps);
            adam.lr = cfg.lr * std::max(0.1, 1.0 - frac);
        }
        Tensor in(cfg.batch, d + 1);
        std::vector<double> targets(cfg.batch);
        std::vector<double> weights(cfg.batch);
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            std::vector<double> z(d);
            for (std::size_t j = 0; j < d; ++j) {
                z[j] = rng.uniform(cfg.domain.lo[j], cfg.domain.hi[j]);
            }
            const double sigma = 1.0 / rng.uniform(inv_lo, inv_hi);
            for (std::size_t j = 0; j < d; ++j) in(b, j) = z[j];
            in(b, d) = sigma;
            // each target is a full pass over the dataset; this is the expensive part
            targets[b] = softmin_distance_sq(z, data, sigma, default_positivity_offset(sigma, data.count()));
            weights[b] = (inv_hi - inv_lo) / (reg.sigma_max - reg.sigma_min);
        }
        Tape tape;
        const auto params = reg.net.register_params(tape);
        const Tape::Id input = tape.constant(in);
        const Tape::Id pred = reg.net.forward_on_tape(tape, input, params);
        // weighted L1: subgradient via sign of the residual held fixed
        Tensor resid = tape.value(pred);
        Tensor sign_w(cfg.batch, 1);
        double loss_val = 0.0;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const double r = resid.values[b] - targets[b];
            loss_val += weights[b] * std::abs(r);
            sign_w.values[b] = weights[b] * (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) /
                               static_cast<double>(cfg.batch);
        }
        loss_val /= static_cast<double>(cfg.batch);
        const Tape::Id loss = tape.dot_const(pred, sign_w);
        tape.backward(loss);
        const auto grads = reg.net.collect_grads(tape, params);
        adam_step(reg.net.params, grads, adam);
        if (log.is_open()) {
            const auto t1 = std::chrono::steady_clock::now();
            const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            log << step << "," << loss_val << "," << ms << "," << data.count() << "\n";
        }
    }
    return reg;
}

}  // namespace sgp
