#include "sgp/planners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sgp {

ScoreFn score_fn_from_net(const ScoreNet& net) {
    return [&net](std::span<const double> z, std::size_t level) { return net.eval(z, level); };
}

ScoreFn score_fn_from_oracle(const PointSet& points, const NoiseSchedule& schedule) {
    return [&points, schedule](std::span<const double> z, std::size_t level) {
        return exact_score(z, points, schedule.sigma(level));
    };
}

LikelihoodFn likelihood_fn_from_points(const PointSet& points) {
    return [&points](std::span<const double> z, double sigma) {
        return perturbed_log_likelihood(z, points, sigma);
    };
}

RewardModel reward_from_env(const Env& env) {
    RewardModel r;
    r.pair = [&env](std::size_t t, std::size_t horizon, std::span<const double> x,
                    std::span<const double> u) { return -env.pair_cost(t, horizon, x, u); };
    r.end = [&env](std::span<const double> x) { return -env.end_cost(x); };
    r.pair_on_tape = [&env](Tape& tape, std::size_t t, std::size_t horizon, Tape::Id x, Tape::Id u) {
        return env.reward_pair_on_tape(tape, t, horizon, x, u);
    };
    r.end_on_tape = [&env](Tape& tape, Tape::Id x) { return env.reward_end_on_tape(tape, x); };
    return r;
}

RewardModel zero_reward() {
    RewardModel r;
    r.pair = [](std::size_t, std::size_t, std::span<const double>, std::span<const double>) {
        return 0.0;
    };
    r.end = [](std::span<const double>) { return 0.0; };
    r.pair_on_tape = [](Tape& tape, std::size_t, std::size_t, Tape::Id, Tape::Id) {
        return tape.constant(Tensor::scalar(0.0));
    };
    r.end_on_tape = [](Tape& tape, Tape::Id) { return tape.constant(Tensor::scalar(0.0)); };
    return r;
}

Tensor rollout(const DynamicsModel& dyn, std::span<const double> x1, const Tensor& u_seq) {
    const std::size_t horizon = u_seq.rows();
    Tensor xs(horizon + 1, dyn.n);
    std::copy(x1.begin(), x1.end(), xs.values.begin());
    std::vector<double> cur(x1.begin(), x1.end());
    for (std::size_t t = 0; t < horizon; ++t) {
        const auto next = dyn.predict(cur, {&u_seq.values[t * dyn.m], dyn.m});
        if (!all_finite(next)) {
            throw numeric_error("rollout: non-finite state at step " + std::to_string(t + 1));
        }
        std::copy(next.begin(), next.end(),
                  xs.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * dyn.n));
        cur = next;
    }
    return xs;
}

namespace {

std::vector<double> concat_xu(std::span<const double> x, std::span<const double> u) {
    std::vector<double> z;
    z.reserve(x.size() + u.size());
    z.insert(z.end(), x.begin(), x.end());
    z.insert(z.end(), u.begin(), u.end());
    return z;
}

}  // namespace

ObjectiveParts penalized_value(const Tensor& x_seq, const Tensor& u_seq, const RewardModel& reward,
                               const LikelihoodFn* likelihood, const ScoreFn* score, double beta,
                               double sigma, std::size_t level, const NormStats& z_stats) {
    const std::size_t horizon = u_seq.rows();
    const std::size_t n = x_seq.cols();
    const std::size_t m = u_seq.cols();
    if (x_seq.rows() != horizon + 1) {
        throw shape_error("penalized_value: x_seq must have one more row than u_seq");
    }
    ObjectiveParts parts;
    for (std::size_t t = 0; t < horizon; ++t) {
        parts.reward += reward.pair(t + 1, horizon, {&x_seq.values[t * n], n}, {&u_seq.values[t * m], m});
    }
    parts.reward += reward.end({&x_seq.values[horizon * n], n});

    if (beta != 0.0) {
        if (likelihood != nullptr) {
            double acc = 0.0;
            for (std::size_t t = 0; t < horizon; ++t) {
                const auto z = concat_xu({&x_seq.values[t * n], n}, {&u_seq.values[t * m], m});
                acc += (*likelihood)(z_stats.normalize(z), sigma);
            }
            parts.penalty = beta * sigma * sigma * acc;
            parts.penalty_exact = true;
        } else if (score != nullptr) {
            // surrogate anchor sum_t s(z_t) . z_t; a descent oracle, not a likelihood
            double acc = 0.0;
            for (std::size_t t = 0; t < horizon; ++t) {
                const auto z = concat_xu({&x_seq.values[t * n], n}, {&u_seq.values[t * m], m});
                const auto zn = z_stats.normalize(z);
                const auto s = (*score)(zn, level);
                for (std::size_t j = 0; j < zn.size(); ++j) acc += s[j] * zn[j];
            }
            parts.penalty = beta * sigma * sigma * acc;
            parts.penalty_exact = false;
        }
    } else {
        parts.penalty_exact = true;  // exactly zero
    }
    parts.total = parts.reward + parts.penalty;
    return parts;
}

SgpGradientResult sgp_gradient(const DynamicsModel& dyn, const ScoreFn& score, const RewardModel& reward,
                               std::span<const double> x1, const Tensor& u_seq, double beta,
                               std::size_t level, double sigma, const NormStats& z_stats) {
    const std::size_t horizon = u_seq.rows();
    const std::size_t n = dyn.n;
    const std::size_t m = dyn.m;
    Tape tape;
    const auto dyn_params = dyn.register_params(tape);

    std::vector<Tape::Id> u_nodes(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
        Tensor u(1, m);
        for (std::size_t j = 0; j < m; ++j) u.values[j] = u_seq(t, j);
        u_nodes[t] = tape.leaf(std::move(u));
    }

    Tensor x0(1, n);
    std::copy(x1.begin(), x1.end(), x0.values.begin());
    Tape::Id x_node = tape.leaf(std::move(x0));

    Tensor xs(horizon + 1, n);
    std::copy(x1.begin(), x1.end(), xs.values.begin());

    Tape::Id objective = -1;
    double reward_val = 0.0;
    double surrogate_val = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
        const Tape::Id r = reward.pair_on_tape(tape, t + 1, horizon, x_node, u_nodes[t]);
        reward_val += tape.value(r).values[0];
        objective = objective < 0 ? r : tape.add(objective, r);

        if (beta != 0.0) {
            // evaluate the score at the current (x_t, u_t), detach it, and fold it
            // in as a linear term; the normalization Jacobian maps it to raw coords
            const Tensor& xv = tape.value(x_node);
            const Tensor& uv = tape.value(u_nodes[t]);
            const auto z = concat_xu({xv.values.data(), n}, {uv.values.data(), m});
            const auto zn = z_stats.normalize(z);
            const auto s = score(zn, level);
            if (!all_finite(s)) {
                throw numeric_error("sgp_gradient: non-finite score at step " + std::to_string(t + 1));
            }
            const double w = beta * sigma * sigma;
            Tensor wx(1, n);
            Tensor wu(1, m);
            double anchor = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                wx.values[j] = w * s[j] / z_stats.std_dev[j];
                anchor += s[j] * zn[j];
            }
            for (std::size_t j = 0; j < m; ++j) {
                wu.values[j] = w * s[n + j] / z_stats.std_dev[n + j];
                anchor += s[n + j] * zn[n + j];
            }
            surrogate_val += w * anchor;
            const Tape::Id sx = tape.dot_const(x_node, wx);
            const Tape::Id su = tape.dot_const(u_nodes[t], wu);
            objective = tape.add(objective, tape.add(sx, su));
        }

        x_node = dyn.predict_on_tape(tape, dyn_params, x_node, u_nodes[t]);
        if (!tape.value(x_node).all_finite()) {
            throw numeric_error("sgp_gradient: rollout diverged at step " + std::to_string(t + 1));
        }
        const Tensor& xv = tape.value(x_node);
        std::copy(xv.values.begin(), xv.values.end(),
                  xs.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * n));
    }
    const Tape::Id end_r = reward.end_on_tape(tape, x_node);
    reward_val += tape.value(end_r).values[0];
    objective = tape.add(objective, end_r);

    tape.backward(objective);

    SgpGradientResult res;
    res.grad_u = Tensor(horizon, m);
    for (std::size_t t = 0; t < horizon; ++t) {
        const Tensor& g = tape.grad(u_nodes[t]);
        for (std::size_t j = 0; j < m; ++j) res.grad_u(t, j) = g.values[j];
    }
    res.x_seq = std::move(xs);
    res.reward = reward_val;
    res.surrogate_penalty = surrogate_val;
    return res;
}

std::size_t annealing_level(std::size_t iter, std::size_t max_iters, std::size_t levels) {
    // 1-based ceil((iter+1) * K / max_iters), returned 0-based
    const std::size_t one_based =
        ((iter + 1) * levels + max_iters - 1) / max_iters;
    return std::min(levels, std::max<std::size_t>(1, one_based)) - 1;
}

namespace {

Tensor init_controls(std::size_t horizon, std::size_t m, const PlannerConfig& cfg) {
    Tensor u(horizon, m);
    if (cfg.init == InitKind::Gaussian) {
        Rng rng(cfg.seed, /*stream=*/0x1417);
        for (std::size_t t = 0; t < horizon; ++t) {
            for (std::size_t j = 0; j < m; ++j) {
                const double half = 0.5 * (cfg.action_box.hi[j] - cfg.action_box.lo[j]);
                u(t, j) = cfg.init_scale * half * rng.normal();
            }
        }
    }
    return u;
}

void clip_to_box(Tensor& u, const Box& box) {
    const std::size_t m = u.cols();
    for (std::size_t t = 0; t < u.rows(); ++t) {
        for (std::size_t j = 0; j < m; ++j) {
            u(t, j) = std::clamp(u(t, j), box.lo[j], box.hi[j]);
        }
    }
}

void clip_global_norm(Tensor& g, double max_norm) {
    if (max_norm <= 0.0) {
        return;
    }
    double sq = 0.0;
    for (double v : g.values) sq += v * v;
    const double nrm = std::sqrt(sq);
    if (nrm > max_norm) {
        const double s = max_norm / nrm;
        for (double& v : g.values) v *= s;
    }
}

}  // namespace

Plan sgp_plan(const DynamicsModel& dyn, const ScoreFn* score, const RewardModel& reward,
              std::span<const double> x1, const PlannerConfig& cfg, const LikelihoodFn* likelihood,
              const Tensor* u_init) {
    if (cfg.schedule.levels() == 0) {
        throw config_error("sgp_plan: empty noise schedule");
    }
    if (cfg.horizon == 0) {
        throw config_error("sgp_plan: horizon must be set");
    }
    const bool use_score = cfg.imitation || cfg.beta != 0.0;
    if (use_score && score == nullptr) {
        throw config_error("sgp_plan: score function required when beta != 0");
    }
    const std::size_t horizon = cfg.horizon;
    const std::size_t m = dyn.m;
    const double beta_base = cfg.imitation ? 1.0 : cfg.beta;
    const RewardModel active_reward = cfg.imitation ? zero_reward() : reward;
    const double sigma_ref = cfg.schedule.sigma_min();

    Tensor u = u_init != nullptr ? *u_init : init_controls(horizon, m, cfg);
    clip_to_box(u, cfg.action_box);

    AdamState adam = AdamState::make(horizon * m, cfg.lr);

    Plan plan;
    plan.history.reserve(cfg.max_iters + 1);
    Tensor best_u;
    Tensor best_x;
    ObjectiveParts best_parts;
    double best_objective = -std::numeric_limits<double>::infinity();
    bool have_best = false;

    // evaluates iterate `u` (and its rollout) at the given level; exact when a
    // likelihood oracle is present, surrogate-flagged otherwise
    const auto evaluate = [&](const Tensor& u_cur, const Tensor& xs, double reward_known,
                              double surrogate_known, std::size_t level, double beta_level,
                              double sigma) -> ObjectiveParts {
        if (likelihood != nullptr && beta_level != 0.0) {
            return penalized_value(xs, u_cur, active_reward, likelihood, nullptr, beta_level, sigma,
                                   level, dyn.z_stats);
        }
        ObjectiveParts parts;
        parts.reward = reward_known;
        parts.penalty = surrogate_known;
        parts.penalty_exact = beta_level == 0.0;
        parts.total = parts.reward + parts.penalty;
        return parts;
    };

    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        const std::size_t level = annealing_level(iter, cfg.max_iters, cfg.schedule.levels());
        const double sigma = cfg.schedule.sigma(level);
        const double beta_level =
            cfg.normalized_penalty ? beta_base * (sigma_ref * sigma_ref) / (sigma * sigma) : beta_base;

        SgpGradientResult g =
            use_score ? sgp_gradient(dyn, *score, active_reward, x1, u, beta_level, level, sigma,
                                     dyn.z_stats)
                      : sgp_gradient(dyn, ScoreFn{}, active_reward, x1, u, 0.0, level, sigma,
                                     dyn.z_stats);

        const ObjectiveParts parts =
            evaluate(u, g.x_seq, g.reward, g.surrogate_penalty, level, beta_level, sigma);
        PlanHistoryRow row;
        row.iter = iter;
        row.level = level;
        row.sigma = sigma;
        row.objective = parts.total;
        row.reward = parts.reward;
        row.penalty = parts.penalty;
        plan.history.push_back(row);

        if (cfg.best_iterate && parts.penalty_exact && parts.total > best_objective) {
            best_objective = parts.total;
            best_u = u;
            best_x = g.x_seq;
            best_parts = parts;
            have_best = true;
        }

        clip_global_norm(g.grad_u, cfg.grad_clip);
        for (double& v : g.grad_u.values) v = -v;  // ascent
        adam_step(u.values, g.grad_u.values, adam);
        clip_to_box(u, cfg.action_box);
    }

    // final iterate
    const std::size_t last_level = annealing_level(cfg.max_iters - 1, cfg.max_iters, cfg.schedule.levels());
    const double last_sigma = cfg.schedule.sigma(last_level);
    const double last_beta =
        cfg.normalized_penalty ? beta_base * (sigma_ref * sigma_ref) / (last_sigma * last_sigma)
                               : beta_base;
    const Tensor xs = rollout(dyn, x1, u);
    const ObjectiveParts final_parts = penalized_value(xs, u, active_reward, likelihood,
                                                       use_score ? score : nullptr, last_beta,
                                                       last_sigma, last_level, dyn.z_stats);
    PlanHistoryRow row;
    row.iter = cfg.max_iters;
    row.level = last_level;
    row.sigma = last_sigma;
    row.objective = final_parts.total;
    row.reward = final_parts.reward;
    row.penalty = final_parts.penalty;
    plan.history.push_back(row);

    if (cfg.best_iterate && final_parts.penalty_exact && final_parts.total > best_objective) {
        best_u = u;
        best_x = xs;
        best_parts = final_parts;
        have_best = true;
    }

    if (have_best) {
        plan.u_seq = std::move(best_u);
        plan.x_seq = std::move(best_x);
        plan.objective = best_parts.total;
        plan.reward = best_parts.reward;
        plan.penalty = best_parts.penalty;
        plan.penalty_exact = best_parts.penalty_exact;
    } else {
        plan.u_seq = u;
        plan.x_seq = xs;
        plan.objective = final_parts.total;
        plan.reward = final_parts.reward;
        plan.penalty = final_parts.penalty;
        plan.penalty_exact = final_parts.penalty_exact;
    }
    return plan;
}

Plan ensemble_plan(const Ensemble& ens, const RewardModel& reward, std::span<const double> x1,
                   const PlannerConfig& cfg, const Tensor* u_init) {
    if (cfg.horizon == 0) {
        throw config_error("ensemble_plan: horizon must be set");
    }
    const std::size_t horizon = cfg.horizon;
    const std::size_t m = ens.members.front().m;
    const std::size_t n = ens.members.front().n;
    Tensor u = u_init != nullptr ? *u_init : init_controls(horizon, m, cfg);
    clip_to_box(u, cfg.action_box);
    AdamState adam = AdamState::make(horizon * m, cfg.lr);

    Tensor best_u;
    Tensor best_x;
    double best_objective = -std::numeric_limits<double>::infinity();
    double best_reward = 0.0;
    double best_penalty = 0.0;
    bool have_best = false;

    Plan plan;
    plan.history.reserve(cfg.max_iters);
    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        Tape tape;
        const auto params = ens.register_params(tape);
        std::vector<Tape::Id> u_nodes(horizon);
        for (std::size_t t = 0; t < horizon; ++t) {
            Tensor ut(1, m);
            for (std::size_t j = 0; j < m; ++j) ut.values[j] = u(t, j);
            u_nodes[t] = tape.leaf(std::move(ut));
        }
        Tensor x0(1, n);
        std::copy(x1.begin(), x1.end(), x0.values.begin());
        Tape::Id x_node = tape.leaf(std::move(x0));
        Tensor xs(horizon + 1, n);
        std::copy(x1.begin(), x1.end(), xs.values.begin());

        Tape::Id objective = -1;
        double reward_val = 0.0;
        double penalty_val = 0.0;
        for (std::size_t t = 0; t < horizon; ++t) {
            const Tape::Id r = reward.pair_on_tape(tape, t + 1, horizon, x_node, u_nodes[t]);
            reward_val += tape.value(r).values[0];
            objective = objective < 0 ? r : tape.add(objective, r);
            if (cfg.beta != 0.0) {
                const Tape::Id var = ens.variance_on_tape(tape, params, x_node, u_nodes[t]);
                penalty_val -= cfg.beta * tape.value(var).values[0];
                objective = tape.add(objective, tape.scale(var, -cfg.beta));
            }
            x_node = ens.predict_mean_on_tape(tape, params, x_node, u_nodes[t]);
            if (!tape.value(x_node).all_finite()) {
                throw numeric_error("ensemble_plan: rollout diverged at step " + std::to_string(t + 1));
            }
            const Tensor& xv = tape.value(x_node);
            std::copy(xv.values.begin(), xv.values.end(),
                      xs.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * n));
        }
        const Tape::Id end_r = reward.end_on_tape(tape, x_node);
        reward_val += tape.value(end_r).values[0];
        objective = tape.add(objective, end_r);
        tape.backward(objective);

        PlanHistoryRow row;
        row.iter = iter;
        row.reward = reward_val;
        row.penalty = penalty_val;
        row.objective = reward_val + penalty_val;
        plan.history.push_back(row);
        if (cfg.best_iterate && row.objective > best_objective) {
            best_objective = row.objective;
            best_u = u;
            best_x = xs;
            best_reward = reward_val;
            best_penalty = penalty_val;
            have_best = true;
        }

        Tensor grad(horizon, m);
        for (std::size_t t = 0; t < horizon; ++t) {
            const Tensor& g = tape.grad(u_nodes[t]);
            for (std::size_t j = 0; j < m; ++j) grad(t, j) = -g.values[j];
        }
        clip_global_norm(grad, cfg.grad_clip);
        adam_step(u.values, grad.values, adam);
        clip_to_box(u, cfg.action_box);
    }

    // final iterate under the ensemble mean
    Tensor xs(horizon + 1, n);
    std::vector<double> cur(x1.begin(), x1.end());
    std::copy(cur.begin(), cur.end(), xs.values.begin());
    double reward_val = 0.0;
    double penalty_val = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
        std::span<const double> ut{&u.values[t * m], m};
        reward_val += reward.pair(t + 1, horizon, cur, ut);
        if (cfg.beta != 0.0) {
            penalty_val -= cfg.beta * ensemble_variance(ens, cur, ut);
        }
        cur = ens.predict_mean(cur, ut);
        std::copy(cur.begin(), cur.end(), xs.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * n));
    }
    reward_val += reward.end(cur);
    const double final_objective = reward_val + penalty_val;
    if (cfg.best_iterate && have_best && best_objective >= final_objective) {
        plan.u_seq = std::move(best_u);
        plan.x_seq = std::move(best_x);
        plan.reward = best_reward;
        plan.penalty = best_penalty;
        plan.objective = best_objective;
    } else {
        plan.u_seq = u;
        plan.x_seq = std::move(xs);
        plan.reward = reward_val;
        plan.penalty = penalty_val;
        plan.objective = final_objective;
    }
    plan.penalty_exact = true;  // variance penalty is evaluated exactly
    return plan;
}

Plan cem_plan(const DynamicsModel& dyn, const std::function<double(const Tensor&)>& objective,
              std::span<const double> x1, std::size_t horizon, const Box& action_box,
              const CemConfig& cfg, const Tensor* u_init) {
    if (cfg.elites < 1 || cfg.elites > cfg.population) {
        throw config_error("cem_plan: need 1 <= elites <= population");
    }
    const std::size_t m = dyn.m;
    Rng rng(cfg.seed, /*stream=*/0xce3);
    Tensor mean = u_init != nullptr ? *u_init : Tensor(horizon, m);
    std::vector<double> std_dev(horizon * m, cfg.sample_std);

    Plan plan;
    Tensor best_u;
    double best_val = -std::numeric_limits<double>::infinity();
    std::vector<Tensor> samples(cfg.population, Tensor(horizon, m));
    std::vector<std::pair<double, std::size_t>> scored(cfg.population);

    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        for (std::size_t p = 0; p < cfg.population; ++p) {
            Tensor& s = samples[p];
            for (std::size_t i = 0; i < s.size(); ++i) {
                s.values[i] = mean.values[i] + std_dev[i] * rng.normal();
            }
            clip_to_box(s, action_box);
            scored[p] = {objective(s), p};
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        if (scored.front().first > best_val) {
            best_val = scored.front().first;
            best_u = samples[scored.front().second];
        }
        for (std::size_t i = 0; i < mean.size(); ++i) {
            double acc = 0.0;
            for (std::size_t e = 0; e < cfg.elites; ++e) acc += samples[scored[e].second].values[i];
            mean.values[i] = acc / static_cast<double>(cfg.elites);
        }
        if (cfg.adapt_std) {
            for (std::size_t i = 0; i < mean.size(); ++i) {
                double acc = 0.0;
                for (std::size_t e = 0; e < cfg.elites; ++e) {
                    const double c = samples[scored[e].second].values[i] - mean.values[i];
                    acc += c * c;
                }
                std_dev[i] = std::sqrt(acc / static_cast<double>(cfg.elites)) + 1e-6;
            }
        }
        PlanHistoryRow row;
        row.iter = iter;
        row.objective = best_val;
        row.reward = scored.front().first;
        plan.history.push_back(row);
    }

    plan.u_seq = best_u;
    plan.x_seq = rollout(dyn, x1, best_u);
    plan.objective = best_val;
    plan.reward = best_val;
    plan.penalty = 0.0;
    plan.penalty_exact = true;
    return plan;
}

std::function<double(const Tensor&)> make_return_objective(const DynamicsModel& dyn,
                                                           const RewardModel& reward,
                                                           std::vector<double> x1, double beta,
                                                           const LikelihoodFn* likelihood, double sigma,
                                                           const NormStats& z_stats) {
    return [&dyn, &reward, x1 = std::move(x1), beta, likelihood, sigma, z_stats](const Tensor& u) {
        Tensor xs;
        try {
            xs = rollout(dyn, x1, u);
        } catch (const numeric_error&) {
            return -std::numeric_limits<double>::infinity();
        }
        const ObjectiveParts parts =
            penalized_value(xs, u, reward, beta != 0.0 ? likelihood : nullptr, nullptr, beta, sigma, 0,
                            z_stats);
        return parts.total;
    };
}

MpcResult mpc_run(const Env& env, const PlannerClosure& plan_fn, std::size_t horizon,
                  std::size_t episode_length, bool warm_start) {
    (void)horizon;  // plan_fn closes over its own horizon; kept for the call-site contract
    const std::size_t n = env.state_dim();
    const std::size_t m = env.action_dim();
    MpcResult res;
    std::vector<std::vector<double>> xs;
    std::vector<std::vector<double>> us;
    std::vector<double> cur = env.initial_state();
    xs.push_back(cur);

    Tensor warm;
    bool have_warm = false;
    double model_err_acc = 0.0;
    for (std::size_t step = 0; step < episode_length; ++step) {
        Plan plan;
        try {
            plan = plan_fn(cur, (warm_start && have_warm) ? &warm : nullptr);
        } catch (const numeric_error&) {
            res.truncated = true;
            break;
        }
        std::span<const double> u0{plan.u_seq.values.data(), m};
        const auto next = env.step(cur, u0);
        if (!all_finite(next)) {
            res.truncated = true;
            break;
        }
        // one-step model bias on the executed pair
        double err = 0.0;
        {
            std::span<const double> planned_next{&plan.x_seq.values[n], n};
            for (std::size_t j = 0; j < n; ++j) {
                const double c = next[j] - planned_next[j];
                err += c * c;
            }
            err = std::sqrt(err);
        }
        model_err_acc += err;
        MpcStepLog log;
        log.step = step;
        log.planned_objective = plan.objective;
        log.one_step_model_error = err;
        res.steps.push_back(log);

        us.emplace_back(u0.begin(), u0.end());
        xs.push_back(next);
        cur = next;

        // shift the previous solution forward, repeating the last action
        const std::size_t rows = plan.u_seq.rows();
        warm = Tensor(rows, m);
        for (std::size_t t = 0; t + 1 < rows; ++t) {
            for (std::size_t j = 0; j < m; ++j) warm(t, j) = plan.u_seq(t + 1, j);
        }
        for (std::size_t j = 0; j < m; ++j) warm(rows - 1, j) = plan.u_seq(rows - 1, j);
        have_warm = true;
    }

    const std::size_t steps_done = us.size();
    res.executed_x = Tensor(steps_done + 1, n);
    res.executed_u = Tensor(steps_done, m);
    for (std::size_t t = 0; t <= steps_done; ++t) {
        std::copy(xs[t].begin(), xs[t].end(),
                  res.executed_x.values.begin() + static_cast<std::ptrdiff_t>(t * n));
    }
    for (std::size_t t = 0; t < steps_done; ++t) {
        std::copy(us[t].begin(), us[t].end(),
                  res.executed_u.values.begin() + static_cast<std::ptrdiff_t>(t * m));
    }
    double cost = 0.0;
    for (std::size_t t = 0; t < steps_done; ++t) {
        cost += env.pair_cost(t + 1, steps_done, xs[t], us[t]);
    }
    cost += env.end_cost(xs[steps_done]);
    res.executed_cost = cost;
    res.mean_model_error = steps_done > 0 ? model_err_acc / static_cast<double>(steps_done) : 0.0;
    return res;
}

MpcResult execute_open_loop(const Env& env, const DynamicsModel& dyn, const Tensor& u_seq,
                            std::span<const double> x1) {
    const std::size_t n = env.state_dim();
    const std::size_t m = env.action_dim();
    const std::size_t horizon = u_seq.rows();
    MpcResult res;
    res.executed_x = Tensor(horizon + 1, n);
    res.executed_u = u_seq;
    std::vector<double> cur = x1.empty() ? env.initial_state() : std::vector<double>(x1.begin(), x1.end());
    std::copy(cur.begin(), cur.end(), res.executed_x.values.begin());
    double model_err_acc = 0.0;
    double cost = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
        std::span<const double> ut{&u_seq.values[t * m], m};
        cost += env.pair_cost(t + 1, horizon, cur, ut);
        const auto next = env.step(cur, ut);
        const auto predicted = dyn.predict(cur, ut);
        double err = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double c = next[j] - predicted[j];
            err += c * c;
        }
        model_err_acc += std::sqrt(err);
        MpcStepLog log;
        log.step = t;
        log.one_step_model_error = std::sqrt(err);
        res.steps.push_back(log);
        std::copy(next.begin(), next.end(),
                  res.executed_x.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * n));
        cur = next;
    }
    cost += env.end_cost(cur);
    res.executed_cost = cost;
    res.mean_model_error = horizon > 0 ? model_err_acc / static_cast<double>(horizon) : 0.0;
    return res;
}

std::vector<double> Policy::act(std::span<const double> x) const {
    Tensor in(1, x.size());
    std::copy(x.begin(), x.end(), in.values.begin());
    const Tensor raw = net.forward(in);
    std::vector<double> u(raw.size());
    for (std::size_t j = 0; j < u.size(); ++j) {
        const double center = 0.5 * (action_box.hi[j] + action_box.lo[j]);
        const double half = 0.5 * (action_box.hi[j] - action_box.lo[j]);
        u[j] = center + half * std::tanh(raw.values[j]);
    }
    return u;
}

Tape::Id Policy::act_on_tape(Tape& tape, const Mlp::TapeParams& p, Tape::Id x) const {
    const std::size_t m = net.output_dim();
    Tape::Id raw = net.forward_on_tape(tape, x, p);
    Tape::Id squashed = tape.activation(raw, Activation::Tanh);
    Tensor half(1, m);
    Tensor center(1, m);
    for (std::size_t j = 0; j < m; ++j) {
        half.values[j] = 0.5 * (action_box.hi[j] - action_box.lo[j]);
        center.values[j] = 0.5 * (action_box.hi[j] + action_box.lo[j]);
    }
    return tape.affine_diag(squashed, half, center);
}

Policy make_policy(std::size_t state_dim, const std::vector<std::size_t>& hidden, const Box& action_box,
                   std::uint64_t seed) {
    Policy p;
    std::vector<std::size_t> widths;
    widths.push_back(state_dim);
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(action_box.dim());
    p.net = mlp_init(widths, Activation::Tanh, seed);
    p.action_box = action_box;
    return p;
}

PolicyGradResult policy_search_step(const Policy& policy, const DynamicsModel& dyn, const ScoreFn* score,
                                    const RewardModel& reward,
                                    const std::function<std::vector<double>(Rng&)>& initial_sampler,
                                    std::size_t n_mc, double beta, std::size_t level, double sigma,
                                    const NormStats& z_stats, std::size_t horizon, Rng& rng) {
    if (beta != 0.0 && score == nullptr) {
        throw config_error("policy_search_step: score function required when beta != 0");
    }
    const std::size_t n = dyn.n;
    const std::size_t m = dyn.m;
    PolicyGradResult out;
    out.grad.assign(policy.net.params.size(), 0.0);
    std::size_t used = 0;
    for (std::size_t sample = 0; sample < n_mc; ++sample) {
        const auto x1 = initial_sampler(rng);
        try {
            Tape tape;
            const auto pol_params = policy.net.register_params(tape);
            const auto dyn_params = dyn.register_params(tape);
            Tensor x0(1, n);
            std::copy(x1.begin(), x1.end(), x0.values.begin());
            Tape::Id x_node = tape.leaf(std::move(x0));
            Tape::Id objective = -1;
            double reward_acc = 0.0;
            double surr_acc = 0.0;
            for (std::size_t t = 0; t < horizon; ++t) {
                Tape::Id u_node = policy.act_on_tape(tape, pol_params, x_node);
                const Tape::Id r = reward.pair_on_tape(tape, t + 1, horizon, x_node, u_node);
                reward_acc += tape.value(r).values[0];
                objective = objective < 0 ? r : tape.add(objective, r);
                if (beta != 0.0) {
                    const Tensor& xv = tape.value(x_node);
                    const Tensor& uv = tape.value(u_node);
                    const auto z = concat_xu({xv.values.data(), n}, {uv.values.data(), m});
                    const auto zn = z_stats.normalize(z);
                    const auto s = (*score)(zn, level);
                    const double w = beta * sigma * sigma;
                    Tensor wx(1, n);
                    Tensor wu(1, m);
                    for (std::size_t j = 0; j < n; ++j) {
                        wx.values[j] = w * s[j] / z_stats.std_dev[j];
                        surr_acc += w * s[j] * zn[j];
                    }
                    for (std::size_t j = 0; j < m; ++j) {
                        wu.values[j] = w * s[n + j] / z_stats.std_dev[n + j];
                        surr_acc += w * s[n + j] * zn[n + j];
                    }
                    objective = tape.add(objective, tape.add(tape.dot_const(x_node, wx),
                                                             tape.dot_const(u_node, wu)));
                }
                x_node = dyn.predict_on_tape(tape, dyn_params, x_node, u_node);
                if (!tape.value(x_node).all_finite()) {
                    throw numeric_error("policy rollout diverged");
                }
            }
            objective = tape.add(objective, reward.end_on_tape(tape, x_node));
            const Tensor& xterm = tape.value(x_node);
            reward_acc += reward.end({xterm.values.data(), n});
            tape.backward(objective);
            const auto g = policy.net.collect_grads(tape, pol_params);
            for (std::size_t j = 0; j < g.size(); ++j) out.grad[j] += g[j];
            out.mean_reward += reward_acc;
            out.mean_surrogate += surr_acc;
            ++used;
        } catch (const numeric_error&) {
            ++out.dropped;
        }
    }
    if (used > 0) {
        for (double& v : out.grad) v /= static_cast<double>(used);
        out.mean_reward /= static_cast<double>(used);
        out.mean_surrogate /= static_cast<double>(used);
    }
    return out;
}

}  // namespace sgp
