#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sgp/dataset.hpp"
#include "sgp/distance.hpp"
#include "sgp/dynamics_model.hpp"
#include "sgp/environments.hpp"
#include "sgp/schedule.hpp"
#include "sgp/score_model.hpp"

namespace sgp {

// Score oracle in the normalized point space; level indexes the planning schedule.
using ScoreFn = std::function<std::vector<double>(std::span<const double> z_norm, std::size_t level)>;
// Exact log p_sigma in the normalized point space.
using LikelihoodFn = std::function<double(std::span<const double> z_norm, double sigma)>;

ScoreFn score_fn_from_net(const ScoreNet& net);
ScoreFn score_fn_from_oracle(const PointSet& normalized_points, const NoiseSchedule& schedule);
LikelihoodFn likelihood_fn_from_points(const PointSet& normalized_points);

// Reward interface used by all planners (value path and tape path).
struct RewardModel {
    std::function<double(std::size_t t, std::size_t horizon, std::span<const double> x,
                         std::span<const double> u)>
        pair;
    std::function<double(std::span<const double> x)> end;
    std::function<Tape::Id(Tape&, std::size_t t, std::size_t horizon, Tape::Id x, Tape::Id u)>
        pair_on_tape;
    std::function<Tape::Id(Tape&, Tape::Id x)> end_on_tape;
};

RewardModel reward_from_env(const Env& env);
RewardModel zero_reward();

// Open-loop rollout under the learned model; x_seq has T+1 rows.
Tensor rollout(const DynamicsModel& dyn, std::span<const double> x1, const Tensor& u_seq);

struct ObjectiveParts {
    double total = 0.0;
    double reward = 0.0;
    double penalty = 0.0;
    bool penalty_exact = false;  // false: score-path surrogate, value not a likelihood
};

// Reward plus beta sigma^2 sum_t log p_sigma(x_t, u_t). With a likelihood
// oracle the penalty column is exact; with only a score function it reports
// the detached surrogate anchor instead and is flagged.
ObjectiveParts penalized_value(const Tensor& x_seq, const Tensor& u_seq, const RewardModel& reward,
                               const LikelihoodFn* likelihood, const ScoreFn* score, double beta,
                               double sigma, std::size_t level, const NormStats& z_stats);

struct SgpGradientResult {
    Tensor grad_u;  // d(total)/d(u_seq), ascent direction
    Tensor x_seq;   // rollout used for the gradient, (T+1) x n
    double reward = 0.0;
    double surrogate_penalty = 0.0;
};

// Gradient of the penalized objective wrt the control sequence: scores are
// evaluated along the rollout, detached, and folded in as linear terms so a
// single reverse sweep yields the full chain through the dynamics.
SgpGradientResult sgp_gradient(const DynamicsModel& dyn, const ScoreFn& score, const RewardModel& reward,
                               std::span<const double> x1, const Tensor& u_seq, double beta,
                               std::size_t level, double sigma, const NormStats& z_stats);

enum class InitKind { Zeros, Gaussian };
enum class PenaltyKind { None, Score, EnsembleVariance };

struct PlannerConfig {
    double beta = 0.1;
    double lr = 0.1;
    std::size_t max_iters = 500;
    NoiseSchedule schedule;
    std::uint64_t seed = 0;
    Box action_box;
    double grad_clip = 100.0;  // global norm; <= 0 disables
    InitKind init = InitKind::Zeros;
    double init_scale = 0.1;        // fraction of the action half-range
    bool best_iterate = true;       // needs an exact penalty value; otherwise last iterate
    bool normalized_penalty = false;  // scale the penalty by sigma_K^2 at every level
    bool imitation = false;         // beta = inf: drop the reward, pure likelihood ascent
    std::size_t horizon = 0;        // 0: use the env episode length
};

struct PlanHistoryRow {
    std::size_t iter = 0;
    std::size_t level = 0;
    double sigma = 0.0;
    double objective = 0.0;
    double reward = 0.0;
    double penalty = 0.0;
};

struct Plan {
    Tensor u_seq;   // T x m
    Tensor x_seq;   // (T+1) x n
    double objective = 0.0;
    double reward = 0.0;
    double penalty = 0.0;
    bool penalty_exact = false;
    std::vector<PlanHistoryRow> history;
};

// Level used at iteration j under the equal-partition annealing rule.
std::size_t annealing_level(std::size_t iter, std::size_t max_iters, std::size_t levels);

Plan sgp_plan(const DynamicsModel& dyn, const ScoreFn* score, const RewardModel& reward,
              std::span<const double> x1, const PlannerConfig& cfg,
              const LikelihoodFn* likelihood = nullptr, const Tensor* u_init = nullptr);

Plan ensemble_plan(const Ensemble& ens, const RewardModel& reward, std::span<const double> x1,
                   const PlannerConfig& cfg, const Tensor* u_init = nullptr);

struct CemConfig {
    std::size_t population = 10;
    std::size_t elites = 4;
    double sample_std = 0.05;
    std::size_t iterations = 500;
    std::uint64_t seed = 0;
    bool adapt_std = false;
};

// Maximizes objective(u_seq) by elite-mean updates of a fixed-variance
// Gaussian; returns the best sample seen.
Plan cem_plan(const DynamicsModel& dyn, const std::function<double(const Tensor&)>& objective,
              std::span<const double> x1, std::size_t horizon, const Box& action_box,
              const CemConfig& cfg, const Tensor* u_init = nullptr);

// Model return plus optional exact penalty, for zeroth-order planners.
std::function<double(const Tensor&)> make_return_objective(const DynamicsModel& dyn,
                                                           const RewardModel& reward,
                                                           std::vector<double> x1, double beta,
                                                           const LikelihoodFn* likelihood, double sigma,
                                                           const NormStats& z_stats);

struct MpcStepLog {
    std::size_t step = 0;
    double planned_objective = 0.0;
    double one_step_model_error = 0.0;  // |x_true_next - f_theta(x_t, u_t)|
};

struct MpcResult {
    Tensor executed_x;  // (L+1) x n
    Tensor executed_u;  // L x m
    double executed_cost = 0.0;
    double mean_model_error = 0.0;
    std::vector<MpcStepLog> steps;
    bool truncated = false;
};

using PlannerClosure = std::function<Plan(std::span<const double> x0, const Tensor* warm_start)>;

MpcResult mpc_run(const Env& env, const PlannerClosure& plan_fn, std::size_t horizon,
                  std::size_t episode_length, bool warm_start);

// Open-loop execution of a fixed control sequence on the true system,
// starting from x1 (empty: the env initial state).
MpcResult execute_open_loop(const Env& env, const DynamicsModel& dyn, const Tensor& u_seq,
                            std::span<const double> x1 = {});

// Feedback policy u = center + half_range * tanh(net(x)).
struct Policy {
    Mlp net;
    Box action_box;

    std::vector<double> act(std::span<const double> x) const;
    Tape::Id act_on_tape(Tape& tape, const Mlp::TapeParams& p, Tape::Id x) const;
};

Policy make_policy(std::size_t state_dim, const std::vector<std::size_t>& hidden, const Box& action_box,
                   std::uint64_t seed);

struct PolicyGradResult {
    std::vector<double> grad;  // ascent direction wrt policy parameters
    double mean_reward = 0.0;
    double mean_surrogate = 0.0;
    std::size_t dropped = 0;
};

PolicyGradResult policy_search_step(const Policy& policy, const DynamicsModel& dyn, const ScoreFn* score,
                                    const RewardModel& reward,
                                    const std::function<std::vector<double>(Rng&)>& initial_sampler,
                                    std::size_t n_mc, double beta, std::size_t level, double sigma,
                                    const NormStats& z_stats, std::size_t horizon, Rng& rng);

}  // namespace sgp
