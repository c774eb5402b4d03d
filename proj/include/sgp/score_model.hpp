#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgp/dataset.hpp"
#include "sgp/distance.hpp"
#include "sgp/mlp.hpp"
#include "sgp/schedule.hpp"

namespace sgp {

enum class Conditioning { Multiplicative, Concat };

Conditioning conditioning_from_string(const std::string& s);
std::string conditioning_to_string(Conditioning c);

struct ScoreNetConfig {
    std::vector<std::size_t> hidden{256, 256, 256, 256};
    Activation act = Activation::Tanh;
    Conditioning conditioning = Conditioning::Multiplicative;
    std::uint64_t seed = 0;
};

// Noise-conditioned score network over points z. Multiplicative mode keeps a
// per-level embedding row that gates every hidden layer's output; concat mode
// appends sigma_k to the input instead. The score is the trunk output divided
// by sigma_k, so the trunk learns O(1) targets at every level and the
// level-weighted denoising losses stay balanced.
struct ScoreNet {
    Mlp trunk;
    Tensor embeddings;  // K x hidden width (multiplicative mode only)
    Conditioning conditioning = Conditioning::Multiplicative;
    NoiseSchedule schedule;
    NormStats z_stats;  // normalization the net was trained under
    std::size_t dim = 0;

    std::size_t levels() const { return schedule.levels(); }

    Tensor forward(const Tensor& z, std::size_t level) const;
    std::vector<double> eval(std::span<const double> z, std::size_t level) const;

    struct TapeParams {
        Mlp::TapeParams trunk;
        Tape::Id embedding_row = -1;
    };
    TapeParams register_params(Tape& tape, std::size_t level) const;
    Tape::Id forward_on_tape(Tape& tape, Tape::Id input, std::size_t level, const TapeParams& p) const;
};

ScoreNet make_score_net(std::size_t dim, const NoiseSchedule& schedule, const ScoreNetConfig& cfg,
                        const NormStats& z_stats);

// Single-level denoising loss: draw z' = z + sigma_k xi and average
// sigma_k^2 |s(z'; k) + (z' - z)/sigma_k^2|^2 over the batch.
double dsm_loss(const ScoreNet& net, const Tensor& batch_z, std::size_t level, Rng& rng);

struct ScoreTrainConfig {
    std::size_t steps = 4000;
    std::size_t batch = 256;
    double lr = 1e-3;
    bool lr_decay = true;  // linear decay to 10% of lr over the run
    std::uint64_t seed = 0;
    std::string log_path;
    std::size_t log_every = 50;
    std::int64_t start_step = 0;  // resumed runs continue the counter
};

// Denoising score matching over all levels; level sampled uniformly per step.
// `points` must already live in the normalized space described by z_stats.
ScoreNet train_score(const PointSet& points, const NoiseSchedule& schedule, const ScoreNetConfig& net_cfg,
                     const ScoreTrainConfig& train_cfg, const NormStats& z_stats,
                     ScoreNet* resume_from = nullptr);

struct ScoreValidationLevel {
    std::size_t level = 0;
    double sigma = 0.0;
    double mean_cos = 0.0;          // perturbed-data probes, z' = z + sigma xi
    double weighted_cos = 0.0;      // cosine weighted by |s*|; insensitive to the
                                    // sign noise where the true score vanishes
    double mean_rel_mag_err = 0.0;  // sum | |s_net| - |s*| | / sum |s*|
    double far_mean_cos = 0.0;      // probes 3..6 sigma away from data
};

struct ScoreValidationReport {
    std::vector<ScoreValidationLevel> levels;
};

ScoreValidationReport validate_against_exact(const ScoreNet& net, const PointSet& points,
                                             const NoiseSchedule& schedule, std::size_t n_probes,
                                             std::uint64_t seed);

void save_score_net(const ScoreNet& net, const std::string& stem, std::int64_t trained_steps = 0);
ScoreNet load_score_net(const std::string& stem);
std::int64_t score_net_trained_steps(const std::string& stem);

}  // namespace sgp
