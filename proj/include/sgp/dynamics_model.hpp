#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgp/dataset.hpp"
#include "sgp/mlp.hpp"

namespace sgp {

struct DynamicsConfig {
    std::vector<std::size_t> hidden{64, 64, 32};
    Activation act = Activation::Tanh;
    bool delta_mode = true;  // x' = x + decoded network output
    std::uint64_t seed = 0;
};

struct TrainConfig {
    std::size_t steps = 3000;
    std::size_t batch = 256;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double val_fraction = 0.1;
    std::string log_path;
    std::size_t log_every = 100;
};

// One-step regressor f(x, u) -> x' operating in normalized coordinates.
struct DynamicsModel {
    Mlp net;
    bool delta_mode = true;
    std::size_t n = 0;
    std::size_t m = 0;
    NormStats z_stats;    // input (x, u) normalization
    NormStats out_stats;  // target normalization (delta or next state)
    double val_rmse = 0.0;

    std::vector<double> predict(std::span<const double> x, std::span<const double> u) const;
    Tensor predict_batch(const Tensor& x, const Tensor& u) const;

    Mlp::TapeParams register_params(Tape& tape) const { return net.register_params(tape); }
    Tape::Id predict_on_tape(Tape& tape, const Mlp::TapeParams& p, Tape::Id x, Tape::Id u) const;
};

DynamicsModel train_dynamics(const TransitionDataset& raw, const DynamicsConfig& cfg,
                             const TrainConfig& train_cfg);

enum class EnsembleMode { SeedOnly, Bootstrap };

struct Ensemble {
    std::vector<DynamicsModel> members;
    EnsembleMode mode = EnsembleMode::SeedOnly;

    std::size_t size() const { return members.size(); }
    std::vector<double> predict_mean(std::span<const double> x, std::span<const double> u) const;
    Tape::Id predict_mean_on_tape(Tape& tape, const std::vector<Mlp::TapeParams>& p, Tape::Id x,
                                  Tape::Id u) const;
    // mean over output dims of the across-member population variance
    Tape::Id variance_on_tape(Tape& tape, const std::vector<Mlp::TapeParams>& p, Tape::Id x,
                              Tape::Id u) const;
    std::vector<Mlp::TapeParams> register_params(Tape& tape) const;
};

Ensemble train_ensemble(const TransitionDataset& raw, std::size_t members, const DynamicsConfig& cfg,
                        const TrainConfig& train_cfg, EnsembleMode mode = EnsembleMode::SeedOnly);

double ensemble_variance(const Ensemble& ens, std::span<const double> x, std::span<const double> u);

void save_dynamics(const DynamicsModel& model, const std::string& stem, std::int64_t trained_steps = 0);
DynamicsModel load_dynamics(const std::string& stem);
void save_ensemble(const Ensemble& ens, const std::string& stem);
Ensemble load_ensemble(const std::string& stem);

}  // namespace sgp
