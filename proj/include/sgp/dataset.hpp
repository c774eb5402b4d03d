#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgp/common.hpp"
#include "sgp/environments.hpp"
#include "sgp/rng.hpp"

namespace sgp {

// N transition triples (state, action, next state).
struct TransitionDataset {
    std::size_t n = 0;
    std::size_t m = 0;
    Tensor states;       // N x n
    Tensor actions;      // N x m
    Tensor next_states;  // N x n

    std::size_t count() const { return states.rows(); }
    std::span<const double> state(std::size_t i) const { return {&states.values[i * n], n}; }
    std::span<const double> action(std::size_t i) const { return {&actions.values[i * m], m}; }
    std::span<const double> next_state(std::size_t i) const { return {&next_states.values[i * n], n}; }
};

// Per-dimension mean / std of a d-dimensional space, population convention,
// std floored at 1e-8.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std_dev;

    std::size_t dim() const { return mean.size(); }
    static NormStats identity(std::size_t d);
    static NormStats compute(const Tensor& rows);
    static NormStats concat(const NormStats& a, const NormStats& b);

    std::vector<double> normalize(std::span<const double> x) const;
    std::vector<double> denormalize(std::span<const double> x) const;
    Tensor normalize_rows(const Tensor& rows) const;
    Tensor denormalize_rows(const Tensor& rows) const;
};

struct DatasetStats {
    NormStats state;   // computed over states and next states jointly
    NormStats action;

    NormStats point() const { return NormStats::concat(state, action); }
};

DatasetStats compute_stats(const TransitionDataset& d);
TransitionDataset normalize(const TransitionDataset& d, const DatasetStats& stats);
TransitionDataset denormalize(const TransitionDataset& d, const DatasetStats& stats);

// Flat set of points z_i = (x_i, u_i), the support of the empirical
// distribution the distance oracles and score models work over.
struct PointSet {
    std::size_t dim = 0;
    Tensor points;  // N x dim

    std::size_t count() const { return points.rows(); }
    std::span<const double> point(std::size_t i) const { return {&points.values[i * dim], dim}; }

    static PointSet from_dataset(const TransitionDataset& d);
    static PointSet from_rows(Tensor rows);
};

// Binary .sgpd format: magic "SGPD", u32 version=1, u32 n, u32 m, u64 N,
// then N*(n+m+n) little-endian f64 (state, action, next state per row).
void save_dataset(const TransitionDataset& d, const std::string& path);
TransitionDataset load_dataset(const std::string& path);
void export_csv(const TransitionDataset& d, const std::string& path);

// Uniform random transitions from the true dynamics: states over `region`
// (or the env data box), actions from the env action sampler.
TransitionDataset collect_random(const Env& env, std::size_t count, std::uint64_t seed,
                                 const Box* region = nullptr);

}  // namespace sgp
