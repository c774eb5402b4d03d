// Command-line driver: data generation, training, planning, MPC execution,
// parameter sweeps, and score validation. Every command writes its fully
// resolved configuration next to its outputs so a run can be reproduced from
// the copy alone.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "sgp/checkpoint.hpp"
#include "sgp/dataset.hpp"
#include "sgp/distance.hpp"
#include "sgp/dynamics_model.hpp"
#include "sgp/environments.hpp"
#include "sgp/planners.hpp"
#include "sgp/schedule.hpp"
#include "sgp/score_model.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

std::vector<std::size_t> parse_widths(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(static_cast<std::size_t>(std::stoul(item)));
    }
    if (out.empty()) {
        throw sgp::config_error("empty width list");
    }
    return out;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "inf") {
            out.push_back(std::numeric_limits<double>::infinity());
        } else {
            out.push_back(std::stod(item));
        }
    }
    return out;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw sgp::io_error("cannot create output directory " + dir + ": " + ec.message());
    }
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw sgp::io_error("cannot open for writing: " + path);
    }
    out << j.dump(2) << "\n";
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw sgp::io_error("cannot open: " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw sgp::io_error("bad json in " + path + ": " + e.what());
    }
    return j;
}

// loads "--config file.json" values into options the user did not pass
// explicitly, so flags win and the resolved set reproduces the run
void apply_config_defaults(CLI::App* cmd, const std::string& config_path) {
    if (config_path.empty()) {
        return;
    }
    const json cfg = load_json_file(config_path);
    for (const auto& [key, value] : cfg.items()) {
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (opt == nullptr || opt->count() > 0 || key == "config") {
            continue;
        }
        std::string text;
        if (value.is_string()) {
            text = value.get<std::string>();
        } else if (value.is_boolean()) {
            if (value.get<bool>()) {
                opt->add_result("true");
            }
            continue;
        } else if (value.is_object() || value.is_array()) {
            continue;
        } else {
            text = value.dump();
        }
        if (!text.empty()) {
            opt->add_result(text);
        }
    }
}

json env_to_json(const sgp::Env& env) {
    json j;
    j["name"] = env.name();
    j["state_dim"] = env.state_dim();
    j["action_dim"] = env.action_dim();
    j["episode_length"] = env.episode_length();
    if (const auto* cp = dynamic_cast<const sgp::CartPoleEnv*>(&env)) {
        j["cart_mass"] = cp->params.cart_mass;
        j["pole_mass"] = cp->params.pole_mass;
        j["pole_length"] = cp->params.pole_length;
        j["gravity"] = cp->params.gravity;
        j["dt"] = cp->params.dt;
        j["integrator"] = cp->params.integrator == sgp::Integrator::Rk4 ? "rk4" : "euler";
        j["force_limit"] = cp->force_limit;
        j["goal"] = cp->goal;
        j["start"] = cp->start;
        j["data_box_lo"] = cp->data_box.lo;
        j["data_box_hi"] = cp->data_box.hi;
        j["q_diag"] = cp->q_diag;
    } else if (const auto* pit = dynamic_cast<const sgp::PitEnv*>(&env)) {
        j["hole_center"] = pit->params.hole_center;
        j["hole_radius"] = pit->params.hole_radius;
        j["goal"] = pit->params.goal;
        j["start"] = pit->params.start;
        j["action_limit"] = pit->action_limit;
        j["q_run"] = pit->q_run;
        j["r_run"] = pit->r_run;
        j["q_end"] = pit->q_end;
    } else if (const auto* px = dynamic_cast<const sgp::PixelEnv*>(&env)) {
        j["grid"] = px->params.grid;
        j["blob_std"] = px->params.blob_std;
        j["q_run"] = px->params.q_run;
        j["r_run"] = px->params.r_run;
        j["q_end"] = px->params.q_end;
        j["goal"] = px->params.goal;
        j["start"] = px->params.start;
    }
    return j;
}

std::unique_ptr<sgp::Env> build_env(const std::string& name, std::size_t horizon, std::size_t grid) {
    auto env = sgp::make_env(name);
    if (auto* px = dynamic_cast<sgp::PixelEnv*>(env.get()); px != nullptr && grid > 0) {
        px->params.grid = grid;
    }
    if (horizon > 0) {
        if (auto* cp = dynamic_cast<sgp::CartPoleEnv*>(env.get())) cp->horizon = horizon;
        if (auto* pit = dynamic_cast<sgp::PitEnv*>(env.get())) pit->horizon = horizon;
        if (auto* px = dynamic_cast<sgp::PixelEnv*>(env.get())) px->params.horizon = horizon;
    }
    return env;
}

void dump_trajectory_csv(const std::string& path, const sgp::Tensor& xs, const sgp::Tensor& us,
                         const std::string& kind) {
    std::ofstream out(path);
    if (!out) {
        throw sgp::io_error("cannot open for writing: " + path);
    }
    const std::size_t n = xs.cols();
    const std::size_t m = us.cols();
    out << "t";
    for (std::size_t j = 0; j < n; ++j) out << ",x" << j;
    for (std::size_t j = 0; j < m; ++j) out << ",u" << j;
    out << ",kind\n";
    out.precision(17);
    for (std::size_t t = 0; t < xs.rows(); ++t) {
        out << t;
        for (std::size_t j = 0; j < n; ++j) out << "," << xs(t, j);
        for (std::size_t j = 0; j < m; ++j) out << "," << (t < us.rows() ? us(t, j) : 0.0);
        out << "," << kind << "\n";
    }
}

void dump_history_json(const std::string& path, const json& config, const sgp::Plan& plan) {
    json j;
    j["config"] = config;
    j["objective"] = plan.objective;
    j["reward"] = plan.reward;
    j["penalty"] = plan.penalty;
    j["penalty_exact"] = plan.penalty_exact;
    json hist = json::array();
    for (const auto& row : plan.history) {
        hist.push_back({{"iter", row.iter},
                        {"level", row.level},
                        {"sigma", row.sigma},
                        {"objective", row.objective},
                        {"reward", row.reward},
                        {"penalty", row.penalty}});
    }
    j["history"] = hist;
    write_json_file(j, path);
}

double episode_cost_of_plan(const sgp::Env& env, const sgp::Plan& plan) {
    const std::size_t n = env.state_dim();
    const std::size_t m = env.action_dim();
    const std::size_t horizon = plan.u_seq.rows();
    double c = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
        c += env.pair_cost(t + 1, horizon, {&plan.x_seq.values[t * n], n},
                           {&plan.u_seq.values[t * m], m});
    }
    c += env.end_cost({&plan.x_seq.values[horizon * n], n});
    return c;
}

// everything a single solve needs, shared by plan / mpc / sweep
struct MethodContext {
    std::string method;
    const sgp::DynamicsModel* dynamics = nullptr;
    const sgp::Ensemble* ensemble = nullptr;
    const sgp::ScoreNet* score_net = nullptr;
    const sgp::PointSet* exact_points = nullptr;  // normalized
    const sgp::DistanceRegressor* distance = nullptr;
    sgp::PlannerConfig planner;
    sgp::CemConfig cem;
    bool history_exact_penalty = false;
};

sgp::Plan solve_once(const MethodContext& ctx, const sgp::RewardModel& reward,
                     std::span<const double> x0, const sgp::Tensor* warm) {
    const std::string& method = ctx.method;
    if (method == "ensemble") {
        if (ctx.ensemble == nullptr) {
            throw sgp::config_error("method 'ensemble' needs --ensemble");
        }
        return ensemble_plan(*ctx.ensemble, reward, x0, ctx.planner, warm);
    }
    if (method == "cem") {
        const double sigma = ctx.planner.schedule.sigma_min();
        const sgp::DynamicsModel& dyn = *ctx.dynamics;
        std::vector<double> x0v(x0.begin(), x0.end());
        std::function<double(const sgp::Tensor&)> objective;
        if (ctx.planner.beta != 0.0 && ctx.distance != nullptr) {
            const sgp::DistanceRegressor* reg = ctx.distance;
            const double beta = ctx.planner.beta;
            const sgp::NormStats stats = dyn.z_stats;
            const sgp::RewardModel rw = reward;
            objective = [&dyn, reg, beta, sigma, stats, rw, x0v](const sgp::Tensor& u) {
                sgp::Tensor xs;
                try {
                    xs = rollout(dyn, x0v, u);
                } catch (const sgp::numeric_error&) {
                    return -std::numeric_limits<double>::infinity();
                }
                const auto parts = penalized_value(xs, u, rw, nullptr, nullptr, 0.0, sigma, 0, stats);
                double penalty = 0.0;
                const std::size_t n = xs.cols();
                const std::size_t m = u.cols();
                for (std::size_t t = 0; t < u.rows(); ++t) {
                    std::vector<double> z(n + m);
                    for (std::size_t j = 0; j < n; ++j) z[j] = xs(t, j);
                    for (std::size_t j = 0; j < m; ++j) z[n + j] = u(t, j);
                    penalty += reg->eval(stats.normalize(z), sigma);
                }
                return parts.reward - beta * penalty;
            };
        } else if (ctx.planner.beta != 0.0 && ctx.exact_points != nullptr) {
            const sgp::PointSet* pts = ctx.exact_points;
            const double beta = ctx.planner.beta;
            const sgp::NormStats stats = dyn.z_stats;
            const sgp::RewardModel rw = reward;
            objective = [&dyn, pts, beta, sigma, stats, rw, x0v](const sgp::Tensor& u) {
                sgp::Tensor xs;
                try {
                    xs = rollout(dyn, x0v, u);
                } catch (const sgp::numeric_error&) {
                    return -std::numeric_limits<double>::infinity();
                }
                const sgp::LikelihoodFn lik = likelihood_fn_from_points(*pts);
                return penalized_value(xs, u, rw, &lik, nullptr, beta, sigma, 0, stats).total;
            };
        } else {
            objective = make_return_objective(dyn, reward, x0v, 0.0, nullptr, sigma, dyn.z_stats);
        }
        sgp::CemConfig cem = ctx.cem;
        cem.iterations = ctx.planner.max_iters;
        cem.seed = ctx.planner.seed;
        return cem_plan(dyn, objective, x0, ctx.planner.horizon, ctx.planner.action_box, cem, warm);
    }

    // gradient methods: sgp / vanilla / imitation
    sgp::PlannerConfig cfg = ctx.planner;
    if (method == "vanilla") {
        cfg.beta = 0.0;
        cfg.imitation = false;
    } else if (method == "imitation") {
        cfg.imitation = true;
    } else if (method != "sgp") {
        throw sgp::config_error("unknown method: " + method);
    }
    sgp::ScoreFn score;
    if (ctx.score_net != nullptr) {
        score = score_fn_from_net(*ctx.score_net);
    } else if (ctx.exact_points != nullptr) {
        score = score_fn_from_oracle(*ctx.exact_points, cfg.schedule);
    }
    sgp::LikelihoodFn lik;
    const sgp::LikelihoodFn* lik_ptr = nullptr;
    if (ctx.history_exact_penalty && ctx.exact_points != nullptr) {
        lik = likelihood_fn_from_points(*ctx.exact_points);
        lik_ptr = &lik;
    }
    const bool needs_score = cfg.imitation || cfg.beta != 0.0;
    if (needs_score && !score) {
        throw sgp::config_error("method '" + method + "' needs --score or --data");
    }
    return sgp_plan(*ctx.dynamics, needs_score ? &score : nullptr, reward, x0, cfg, lik_ptr, warm);
}

struct PlanOptions {
    std::string env = "pit";
    std::string method = "sgp";
    std::string dynamics;
    std::string score;
    std::string ensemble;
    std::string distance;
    std::string data;
    std::string out = "out";
    double beta = 0.1;
    double lr = 0.1;
    std::size_t iters = 500;
    std::uint64_t seed = 0;
    std::size_t horizon = 0;
    std::size_t grid = 0;
    double smax = 0.0;
    double smin = 0.0;
    std::size_t levels = 0;
    double grad_clip = 100.0;
    std::size_t population = 10;
    std::size_t elites = 4;
    double cem_std = 0.05;
    bool exact_history = false;
    bool normalized_penalty = false;
    bool last_iterate = false;
    std::string config;
    std::size_t episode = 0;
    bool no_warm = false;
};

void add_plan_options(CLI::App* cmd, PlanOptions& o) {
    cmd->add_option("--env", o.env, "environment");
    cmd->add_option("--method", o.method, "sgp | vanilla | ensemble | cem | imitation");
    cmd->add_option("--dynamics", o.dynamics, "dynamics checkpoint stem")->required();
    cmd->add_option("--score", o.score, "score checkpoint stem");
    cmd->add_option("--ensemble", o.ensemble, "ensemble checkpoint stem");
    cmd->add_option("--distance", o.distance, "distance regressor checkpoint stem");
    cmd->add_option("--data", o.data, "dataset for exact-oracle penalties");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--beta", o.beta, "penalty weight");
    cmd->add_option("--lr", o.lr, "adam learning rate");
    cmd->add_option("--iters", o.iters, "optimizer iterations");
    cmd->add_option("--seed", o.seed, "rng seed");
    cmd->add_option("--horizon", o.horizon, "planning horizon (0: env episode length)");
    cmd->add_option("--grid", o.grid, "pixel grid override");
    cmd->add_option("--sigma-max", o.smax, "planning sigma max (0: score net schedule)");
    cmd->add_option("--sigma-min", o.smin, "planning sigma min");
    cmd->add_option("--levels", o.levels, "planning schedule levels");
    cmd->add_option("--grad-clip", o.grad_clip, "gradient norm clip, <= 0 disables");
    cmd->add_option("--population", o.population, "cem population");
    cmd->add_option("--elites", o.elites, "cem elite count");
    cmd->add_option("--cem-std", o.cem_std, "cem sampling std");
    cmd->add_flag("--exact-history", o.exact_history, "exact penalty column in the history");
    cmd->add_flag("--normalized-penalty", o.normalized_penalty,
                  "hold the penalty scale constant across levels");
    cmd->add_flag("--last-iterate", o.last_iterate, "return the last iterate, not the best");
    cmd->add_option("--config", o.config, "json config to preload");
}

sgp::DistanceRegressor load_distance(const std::string& stem) {
    const sgp::Checkpoint c = sgp::Checkpoint::load(stem);
    if (c.manifest.value("kind", "") != "distance") {
        throw sgp::io_error("checkpoint is not a distance regressor: " + stem);
    }
    sgp::DistanceRegressor reg;
    reg.net.widths = c.manifest["widths"].get<std::vector<std::size_t>>();
    reg.net.act = sgp::activation_from_string(c.manifest["activation"].get<std::string>());
    reg.net.params = c.blob;
    reg.sigma_min = c.manifest["sigma_min"].get<double>();
    reg.sigma_max = c.manifest["sigma_max"].get<double>();
    reg.dim = c.manifest["dim"].get<std::size_t>();
    return reg;
}

int run_plan_like(PlanOptions& o, bool as_mpc) {
    ensure_dir(o.out);
    const auto env = build_env(o.env, 0, o.grid);
    const std::size_t horizon = o.horizon > 0 ? o.horizon : env->episode_length();

    MethodContext ctx;
    ctx.method = o.method;
    sgp::DynamicsModel dynamics = sgp::load_dynamics(o.dynamics);
    ctx.dynamics = &dynamics;
    sgp::Ensemble ensemble;
    if (!o.ensemble.empty()) {
        ensemble = sgp::load_ensemble(o.ensemble);
        ctx.ensemble = &ensemble;
    }
    sgp::ScoreNet score_net;
    bool have_score = false;
    if (!o.score.empty()) {
        score_net = sgp::load_score_net(o.score);
        ctx.score_net = &score_net;
        have_score = true;
    }
    sgp::DistanceRegressor distance;
    if (!o.distance.empty()) {
        distance = load_distance(o.distance);
        ctx.distance = &distance;
    }
    sgp::TransitionDataset raw;
    sgp::PointSet points;
    if (!o.data.empty()) {
        raw = sgp::load_dataset(o.data);
        const auto stats = compute_stats(raw);
        points = sgp::PointSet::from_dataset(normalize(raw, stats));
        ctx.exact_points = &points;
    }

    ctx.planner.beta = o.beta;
    ctx.planner.lr = o.lr;
    ctx.planner.max_iters = o.iters;
    ctx.planner.seed = o.seed;
    ctx.planner.action_box = env->action_box();
    ctx.planner.grad_clip = o.grad_clip;
    ctx.planner.horizon = horizon;
    ctx.planner.normalized_penalty = o.normalized_penalty;
    ctx.planner.best_iterate = !o.last_iterate;
    if (have_score && o.smax == 0.0) {
        ctx.planner.schedule = score_net.schedule;
    } else {
        const double smax = o.smax > 0.0 ? o.smax : 0.3;
        const double smin = o.smin > 0.0 ? o.smin : 0.05;
        const std::size_t levels = o.levels > 0 ? o.levels : 10;
        ctx.planner.schedule = make_schedule(smax, smin, levels, sgp::ScheduleKind::Geometric);
    }
    ctx.cem.population = o.population;
    ctx.cem.elites = o.elites;
    ctx.cem.sample_std = o.cem_std;
    ctx.history_exact_penalty = o.exact_history;

    json jcfg{{"command", as_mpc ? "mpc" : "plan"},
              {"env", o.env},
              {"method", o.method},
              {"dynamics", o.dynamics},
              {"score", o.score},
              {"ensemble", o.ensemble},
              {"distance", o.distance},
              {"data", o.data},
              {"out", o.out},
              {"beta", o.beta},
              {"lr", o.lr},
              {"iters", o.iters},
              {"seed", o.seed},
              {"horizon", horizon},
              {"grid", o.grid},
              {"sigma-max", o.smax},
              {"sigma-min", o.smin},
              {"levels", o.levels},
              {"grad-clip", o.grad_clip},
              {"population", o.population},
              {"elites", o.elites},
              {"cem-std", o.cem_std},
              {"exact-history", o.exact_history},
              {"normalized-penalty", o.normalized_penalty},
              {"last-iterate", o.last_iterate},
              {"env_params", env_to_json(*env)}};
    if (as_mpc) {
        jcfg["episode"] = o.episode;
        jcfg["warm-start"] = !o.no_warm;
    }
    write_json_file(jcfg, o.out + "/config.json");

    const sgp::RewardModel reward = reward_from_env(*env);
    if (!as_mpc) {
        const auto x0 = env->initial_state();
        const sgp::Plan plan = solve_once(ctx, reward, x0, nullptr);
        const double planned_cost = episode_cost_of_plan(*env, plan);
        const sgp::MpcResult exec = execute_open_loop(*env, dynamics, plan.u_seq);
        dump_trajectory_csv(o.out + "/plan.csv", plan.x_seq, plan.u_seq, "planned");
        dump_trajectory_csv(o.out + "/executed.csv", exec.executed_x, exec.executed_u, "executed");
        dump_history_json(o.out + "/plan.json", jcfg, plan);
        json metrics{{"planned_cost", planned_cost},
                     {"executed_cost", exec.executed_cost},
                     {"mean_one_step_dynamics_error", exec.mean_model_error},
                     {"objective", plan.objective},
                     {"reward", plan.reward},
                     {"penalty", plan.penalty},
                     {"penalty_exact", plan.penalty_exact},
                     {"method", o.method}};
        write_json_file(metrics, o.out + "/metrics.json");
        std::cout << "planned cost " << planned_cost << ", executed cost " << exec.executed_cost
                  << ", mean one-step dynamics error " << exec.mean_model_error << "\n";
        return kExitOk;
    }

    const std::size_t episode = o.episode > 0 ? o.episode : env->episode_length();
    const sgp::PlannerClosure closure = [&](std::span<const double> x0, const sgp::Tensor* warm) {
        return solve_once(ctx, reward, x0, warm);
    };
    const sgp::MpcResult res = mpc_run(*env, closure, horizon, episode, !o.no_warm);
    dump_trajectory_csv(o.out + "/executed.csv", res.executed_x, res.executed_u, "executed");
    json steps = json::array();
    for (const auto& s : res.steps) {
        steps.push_back({{"step", s.step},
                         {"planned_objective", s.planned_objective},
                         {"one_step_model_error", s.one_step_model_error}});
    }
    json metrics{{"executed_cost", res.executed_cost},
                 {"mean_one_step_dynamics_error", res.mean_model_error},
                 {"truncated", res.truncated},
                 {"steps", steps},
                 {"method", o.method}};
    write_json_file(metrics, o.out + "/metrics.json");
    std::cout << "mpc executed cost " << res.executed_cost << ", mean one-step error "
              << res.mean_model_error << (res.truncated ? " (truncated)" : "") << "\n";
    return kExitOk;
}

int protected_main(int argc, char** argv) {
    CLI::App app{"score-guided planning toolkit"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "collect random transitions from a true system");
    std::string g_env = "pit";
    std::size_t g_n = 20000;
    std::uint64_t g_seed = 0;
    std::string g_out = "out";
    std::size_t g_horizon = 0;
    std::size_t g_grid = 0;
    std::string g_config;
    gen->add_option("--env", g_env, "environment: cartpole | pit | pixel");
    gen->add_option("--n", g_n, "number of transitions");
    gen->add_option("--seed", g_seed, "rng seed");
    gen->add_option("--out", g_out, "output directory");
    gen->add_option("--horizon", g_horizon, "episode length override");
    gen->add_option("--grid", g_grid, "pixel grid size override");
    gen->add_option("--config", g_config, "json config to preload");

    auto* td = app.add_subcommand("train-dynamics", "fit a one-step dynamics model");
    std::string td_data;
    std::string td_out = "out";
    std::string td_hidden = "64,64,32";
    std::string td_act = "tanh";
    bool td_absolute = false;
    std::size_t td_steps = 3000;
    std::size_t td_batch = 256;
    double td_lr = 1e-3;
    std::uint64_t td_seed = 0;
    std::string td_config;
    td->add_option("--data", td_data, "input .sgpd dataset")->required();
    td->add_option("--out", td_out, "output directory");
    td->add_option("--hidden", td_hidden, "hidden widths, comma separated");
    td->add_option("--act", td_act, "activation: tanh | relu | softplus");
    td->add_flag("--absolute", td_absolute, "predict the next state instead of a delta");
    td->add_option("--steps", td_steps, "adam steps");
    td->add_option("--batch", td_batch, "batch size");
    td->add_option("--lr", td_lr, "learning rate");
    td->add_option("--seed", td_seed, "rng seed");
    td->add_option("--config", td_config, "json config to preload");

    auto* ts = app.add_subcommand("train-score", "denoising score matching over (x, u) pairs");
    std::string ts_data;
    std::string ts_out = "out";
    std::string ts_hidden = "256,256,256,256";
    std::string ts_act = "tanh";
    std::string ts_cond = "multiplicative";
    double ts_smax = 0.3;
    double ts_smin = 0.05;
    std::size_t ts_levels = 10;
    std::string ts_kind = "geometric";
    std::size_t ts_steps = 4000;
    std::size_t ts_batch = 256;
    double ts_lr = 1e-3;
    std::uint64_t ts_seed = 0;
    std::string ts_resume;
    std::string ts_config;
    ts->add_option("--data", ts_data, "input .sgpd dataset")->required();
    ts->add_option("--out", ts_out, "output directory");
    ts->add_option("--hidden", ts_hidden, "hidden widths, comma separated");
    ts->add_option("--act", ts_act, "activation");
    ts->add_option("--conditioning", ts_cond, "multiplicative | concat");
    ts->add_option("--sigma-max", ts_smax, "largest noise level (normalized space)");
    ts->add_option("--sigma-min", ts_smin, "smallest noise level");
    ts->add_option("--levels", ts_levels, "number of schedule levels");
    ts->add_option("--kind", ts_kind, "geometric | cosine");
    ts->add_option("--steps", ts_steps, "adam steps");
    ts->add_option("--batch", ts_batch, "batch size");
    ts->add_option("--lr", ts_lr, "learning rate");
    ts->add_option("--seed", ts_seed, "rng seed");
    ts->add_option("--resume", ts_resume, "checkpoint stem to continue from");
    ts->add_option("--config", ts_config, "json config to preload");

    auto* te = app.add_subcommand("train-ensemble", "train M dynamics models with distinct seeds");
    std::string te_data;
    std::string te_out = "out";
    std::string te_hidden = "64,64,32";
    std::size_t te_members = 6;
    bool te_bootstrap = false;
    std::size_t te_steps = 3000;
    std::size_t te_batch = 256;
    double te_lr = 1e-3;
    std::uint64_t te_seed = 0;
    std::string te_config;
    te->add_option("--data", te_data, "input .sgpd dataset")->required();
    te->add_option("--out", te_out, "output directory");
    te->add_option("--hidden", te_hidden, "hidden widths");
    te->add_option("--members", te_members, "ensemble size");
    te->add_flag("--bootstrap", te_bootstrap, "bootstrap-resample per member");
    te->add_option("--steps", te_steps, "adam steps");
    te->add_option("--batch", te_batch, "batch size");
    te->add_option("--lr", te_lr, "learning rate");
    te->add_option("--seed", te_seed, "rng seed");
    te->add_option("--config", te_config, "json config to preload");

    auto* tdist = app.add_subcommand("train-distance", "amortized softmin distance regressor");
    std::string tdist_data;
    std::string tdist_out = "out";
    std::string tdist_hidden = "64,64";
    double tdist_smax = 0.3;
    double tdist_smin = 0.05;
    std::size_t tdist_levels = 10;
    std::size_t tdist_steps = 4000;
    std::size_t tdist_batch = 128;
    double tdist_lr = 3e-3;
    std::uint64_t tdist_seed = 0;
    double tdist_pad = 0.5;
    std::string tdist_config;
    tdist->add_option("--data", tdist_data, "input .sgpd dataset")->required();
    tdist->add_option("--out", tdist_out, "output directory");
    tdist->add_option("--hidden", tdist_hidden, "hidden widths");
    tdist->add_option("--sigma-max", tdist_smax, "largest sigma");
    tdist->add_option("--sigma-min", tdist_smin, "smallest sigma");
    tdist->add_option("--levels", tdist_levels, "schedule levels");
    tdist->add_option("--steps", tdist_steps, "adam steps");
    tdist->add_option("--batch", tdist_batch, "batch size");
    tdist->add_option("--lr", tdist_lr, "learning rate");
    tdist->add_option("--seed", tdist_seed, "rng seed");
    tdist->add_option("--domain-pad", tdist_pad, "sampling margin around the data hull");
    tdist->add_option("--config", tdist_config, "json config to preload");

    PlanOptions plan_opts;
    auto* plan_cmd = app.add_subcommand("plan", "solve one open-loop plan and execute it");
    add_plan_options(plan_cmd, plan_opts);

    PlanOptions mpc_opts;
    auto* mpc_cmd = app.add_subcommand("mpc", "receding-horizon execution on the true system");
    add_plan_options(mpc_cmd, mpc_opts);
    mpc_cmd->add_option("--episode", mpc_opts.episode, "episode length (0: env default)");
    mpc_cmd->add_flag("--no-warm", mpc_opts.no_warm, "disable warm starting");

    PlanOptions sweep_opts;
    std::string sweep_param = "beta";
    std::string sweep_grid = "0,1e-3,1e-2,1e-1,1,10";
    std::size_t sweep_score_steps = 3000;
    auto* sweep_cmd = app.add_subcommand("sweep", "grid sweep of beta or sigma");
    add_plan_options(sweep_cmd, sweep_opts);
    sweep_cmd->add_option("--parameter", sweep_param, "beta | sigma");
    sweep_cmd->add_option("--values", sweep_grid, "comma-separated sweep values; inf allowed for beta");
    sweep_cmd->add_option("--score-steps", sweep_score_steps, "training steps per sigma point");

    auto* vs = app.add_subcommand("validate-score", "per-level score accuracy vs the exact oracle");
    std::string vs_score;
    std::string vs_data;
    std::string vs_out = "out";
    std::size_t vs_probes = 500;
    std::uint64_t vs_seed = 0;
    std::string vs_config;
    vs->add_option("--score", vs_score, "score checkpoint stem")->required();
    vs->add_option("--data", vs_data, "dataset (.sgpd)")->required();
    vs->add_option("--out", vs_out, "output directory");
    vs->add_option("--probes", vs_probes, "probes per level");
    vs->add_option("--seed", vs_seed, "rng seed");
    vs->add_option("--config", vs_config, "json config to preload");

    auto* st = app.add_subcommand("stability-test", "annealed descent landing rate on the data");
    std::string st_data;
    std::string st_score;
    std::string st_out = "out";
    std::size_t st_inits = 100;
    std::uint64_t st_seed = 0;
    double st_smax = 0.3;
    double st_smin = 0.01;
    std::size_t st_levels = 10;
    std::size_t st_inner = 40;
    double st_step = 1.0;
    std::string st_config;
    st->add_option("--data", st_data, "dataset (.sgpd)")->required();
    st->add_option("--score", st_score, "score checkpoint stem (default: exact oracle)");
    st->add_option("--out", st_out, "output directory");
    st->add_option("--inits", st_inits, "number of random initializations");
    st->add_option("--seed", st_seed, "rng seed");
    st->add_option("--sigma-max", st_smax, "schedule sigma max");
    st->add_option("--sigma-min", st_smin, "schedule sigma min");
    st->add_option("--levels", st_levels, "schedule levels");
    st->add_option("--inner", st_inner, "descent iterations per level");
    st->add_option("--step", st_step, "descent step size");
    st->add_option("--config", st_config, "json config to preload");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    if (gen->parsed()) {
        apply_config_defaults(gen, g_config);
        if (g_n == 0) {
            throw sgp::config_error("gen-data: --n must be positive");
        }
        ensure_dir(g_out);
        const auto env = build_env(g_env, g_horizon, g_grid);
        const auto data = collect_random(*env, g_n, g_seed);
        save_dataset(data, g_out + "/data.sgpd");
        json cfg{{"command", "gen-data"}, {"env", g_env}, {"n", g_n},        {"seed", g_seed},
                 {"out", g_out},          {"horizon", g_horizon}, {"grid", g_grid},
                 {"env_params", env_to_json(*env)}};
        write_json_file(cfg, g_out + "/config.json");
        std::cout << "wrote " << g_out << "/data.sgpd (" << data.count() << " transitions, n="
                  << data.n << ", m=" << data.m << ")\n";
        return kExitOk;
    }

    if (td->parsed()) {
        apply_config_defaults(td, td_config);
        ensure_dir(td_out);
        const auto data = sgp::load_dataset(td_data);
        sgp::DynamicsConfig cfg;
        cfg.hidden = parse_widths(td_hidden);
        cfg.act = sgp::activation_from_string(td_act);
        cfg.delta_mode = !td_absolute;
        cfg.seed = td_seed;
        sgp::TrainConfig tc;
        tc.steps = td_steps;
        tc.batch = td_batch;
        tc.lr = td_lr;
        tc.seed = td_seed;
        tc.log_path = td_out + "/train_log.csv";
        const auto model = train_dynamics(data, cfg, tc);
        save_dynamics(model, td_out + "/dynamics", static_cast<std::int64_t>(td_steps));
        json jcfg{{"command", "train-dynamics"}, {"data", td_data},   {"out", td_out},
                  {"hidden", td_hidden},         {"act", td_act},     {"absolute", td_absolute},
                  {"steps", td_steps},           {"batch", td_batch}, {"lr", td_lr},
                  {"seed", td_seed}};
        write_json_file(jcfg, td_out + "/config.json");
        write_json_file(json{{"val_rmse", model.val_rmse}}, td_out + "/metrics.json");
        std::cout << "dynamics val rmse (normalized): " << model.val_rmse << "\n";
        return kExitOk;
    }

    if (ts->parsed()) {
        apply_config_defaults(ts, ts_config);
        ensure_dir(ts_out);
        const auto raw = sgp::load_dataset(ts_data);
        const auto stats = compute_stats(raw);
        const auto points = sgp::PointSet::from_dataset(normalize(raw, stats));
        const auto schedule =
            make_schedule(ts_smax, ts_smin, ts_levels, sgp::schedule_kind_from_string(ts_kind));
        sgp::ScoreNetConfig net_cfg;
        net_cfg.hidden = parse_widths(ts_hidden);
        net_cfg.act = sgp::activation_from_string(ts_act);
        net_cfg.conditioning = sgp::conditioning_from_string(ts_cond);
        net_cfg.seed = ts_seed;
        sgp::ScoreTrainConfig tc;
        tc.steps = ts_steps;
        tc.batch = ts_batch;
        tc.lr = ts_lr;
        tc.seed = ts_seed;
        tc.log_path = ts_out + "/train_log.csv";
        sgp::ScoreNet resume;
        sgp::ScoreNet* resume_ptr = nullptr;
        if (!ts_resume.empty()) {
            resume = sgp::load_score_net(ts_resume);
            tc.start_step = sgp::score_net_trained_steps(ts_resume);
            resume_ptr = &resume;
        }
        const auto net = train_score(points, schedule, net_cfg, tc, stats.point(), resume_ptr);
        save_score_net(net, ts_out + "/score", tc.start_step + static_cast<std::int64_t>(ts_steps));
        json jcfg{{"command", "train-score"}, {"data", ts_data},      {"out", ts_out},
                  {"hidden", ts_hidden},      {"act", ts_act},        {"conditioning", ts_cond},
                  {"sigma-max", ts_smax},     {"sigma-min", ts_smin}, {"levels", ts_levels},
                  {"kind", ts_kind},          {"steps", ts_steps},    {"batch", ts_batch},
                  {"lr", ts_lr},              {"seed", ts_seed},      {"resume", ts_resume}};
        write_json_file(jcfg, ts_out + "/config.json");
        std::cout << "score net trained for " << ts_steps << " steps ("
                  << (tc.start_step + static_cast<std::int64_t>(ts_steps)) << " total)\n";
        return kExitOk;
    }

    if (te->parsed()) {
        apply_config_defaults(te, te_config);
        ensure_dir(te_out);
        const auto data = sgp::load_dataset(te_data);
        sgp::DynamicsConfig cfg;
        cfg.hidden = parse_widths(te_hidden);
        cfg.seed = te_seed;
        sgp::TrainConfig tc;
        tc.steps = te_steps;
        tc.batch = te_batch;
        tc.lr = te_lr;
        tc.seed = te_seed;
        const auto ens = train_ensemble(data, te_members, cfg, tc,
                                        te_bootstrap ? sgp::EnsembleMode::Bootstrap
                                                     : sgp::EnsembleMode::SeedOnly);
        save_ensemble(ens, te_out + "/ensemble");
        json jcfg{{"command", "train-ensemble"}, {"data", te_data},
                  {"out", te_out},               {"hidden", te_hidden},
                  {"members", te_members},       {"bootstrap", te_bootstrap},
                  {"steps", te_steps},           {"batch", te_batch},
                  {"lr", te_lr},                 {"seed", te_seed}};
        write_json_file(jcfg, te_out + "/config.json");
        std::cout << "trained " << te_members << " ensemble members\n";
        return kExitOk;
    }

    if (tdist->parsed()) {
        apply_config_defaults(tdist, tdist_config);
        ensure_dir(tdist_out);
        const auto raw = sgp::load_dataset(tdist_data);
        const auto stats = compute_stats(raw);
        const auto points = sgp::PointSet::from_dataset(normalize(raw, stats));
        sgp::Box domain;
        domain.lo.assign(points.dim, 0.0);
        domain.hi.assign(points.dim, 0.0);
        for (std::size_t j = 0; j < points.dim; ++j) {
            double lo = points.points(0, j);
            double hi = lo;
            for (std::size_t i = 1; i < points.count(); ++i) {
                lo = std::min(lo, points.points(i, j));
                hi = std::max(hi, points.points(i, j));
            }
            domain.lo[j] = lo - tdist_pad;
            domain.hi[j] = hi + tdist_pad;
        }
        const auto schedule =
            make_schedule(tdist_smax, tdist_smin, tdist_levels, sgp::ScheduleKind::Geometric);
        sgp::DistanceTrainConfig cfg;
        cfg.hidden = parse_widths(tdist_hidden);
        cfg.steps = tdist_steps;
        cfg.batch = tdist_batch;
        cfg.lr = tdist_lr;
        cfg.seed = tdist_seed;
        cfg.domain = domain;
        cfg.log_path = tdist_out + "/train_log.csv";
        const auto reg = train_distance_regressor(points, schedule, cfg);
        sgp::Checkpoint c;
        c.manifest["format"] = "sgp-checkpoint";
        c.manifest["version"] = 1;
        c.manifest["kind"] = "distance";
        c.manifest["widths"] = reg.net.widths;
        c.manifest["activation"] = activation_to_string(reg.net.act);
        c.manifest["sigma_min"] = reg.sigma_min;
        c.manifest["sigma_max"] = reg.sigma_max;
        c.manifest["dim"] = reg.dim;
        c.manifest["norm"] = {{"mean", stats.point().mean}, {"std", stats.point().std_dev}};
        c.manifest["params"] = {{{"name", "net"}, {"count", reg.net.params.size()}}};
        c.manifest["param_count"] = reg.net.params.size();
        c.blob = reg.net.params;
        c.save(tdist_out + "/distance");
        json jcfg{{"command", "train-distance"}, {"data", tdist_data},
                  {"out", tdist_out},            {"hidden", tdist_hidden},
                  {"sigma-max", tdist_smax},     {"sigma-min", tdist_smin},
                  {"levels", tdist_levels},      {"steps", tdist_steps},
                  {"batch", tdist_batch},        {"lr", tdist_lr},
                  {"seed", tdist_seed},          {"domain-pad", tdist_pad}};
        write_json_file(jcfg, tdist_out + "/config.json");
        std::cout << "distance regressor trained\n";
        return kExitOk;
    }

    if (plan_cmd->parsed()) {
        apply_config_defaults(plan_cmd, plan_opts.config);
        return run_plan_like(plan_opts, false);
    }
    if (mpc_cmd->parsed()) {
        apply_config_defaults(mpc_cmd, mpc_opts.config);
        return run_plan_like(mpc_opts, true);
    }

    if (sweep_cmd->parsed()) {
        apply_config_defaults(sweep_cmd, sweep_opts.config);
        const auto grid = parse_doubles(sweep_grid);
        if (grid.empty()) {
            throw sgp::config_error("sweep: empty grid");
        }
        if (sweep_param != "beta" && sweep_param != "sigma") {
            throw sgp::config_error("sweep: parameter must be beta or sigma");
        }
        ensure_dir(sweep_opts.out);
        std::ofstream csv(sweep_opts.out + "/sweep.csv");
        if (!csv) {
            throw sgp::io_error("cannot open sweep.csv for writing");
        }
        csv << "value,planned_cost,executed_cost,dynamics_error,near_cos,far_cos\n";
        csv.precision(10);

        for (const double value : grid) {
            PlanOptions o = sweep_opts;
            o.out = sweep_opts.out + "/" +
                    (std::isinf(value) ? std::string("inf") : std::to_string(value));
            double near_cos = std::nan("");
            double far_cos = std::nan("");
            if (sweep_param == "beta") {
                if (std::isinf(value)) {
                    o.method = "imitation";
                } else {
                    o.beta = value;
                    if (value == 0.0) {
                        o.method = "vanilla";
                    }
                }
            } else {
                if (o.data.empty()) {
                    throw sgp::config_error("sigma sweep needs --data to retrain score nets");
                }
                const auto raw = sgp::load_dataset(o.data);
                const auto stats = compute_stats(raw);
                const auto points = sgp::PointSet::from_dataset(normalize(raw, stats));
                const auto schedule = make_schedule(value, value, 1, sgp::ScheduleKind::Geometric);
                sgp::ScoreNetConfig net_cfg;
                net_cfg.hidden = {128, 128, 128};
                net_cfg.seed = o.seed;
                sgp::ScoreTrainConfig tc;
                tc.steps = sweep_score_steps;
                tc.batch = 256;
                tc.lr = 2e-3;
                tc.seed = o.seed;
                const auto net = train_score(points, schedule, net_cfg, tc, stats.point());
                ensure_dir(o.out);
                save_score_net(net, o.out + "/score");
                o.score = o.out + "/score";
                o.smax = 0.0;  // use the trained single-level schedule
                const auto report = validate_against_exact(net, points, schedule, 300, o.seed);
                near_cos = report.levels[0].mean_cos;
                far_cos = report.levels[0].far_mean_cos;
            }
            run_plan_like(o, false);
            const json metrics = load_json_file(o.out + "/metrics.json");
            csv << value << "," << metrics["planned_cost"].get<double>() << ","
                << metrics["executed_cost"].get<double>() << ","
                << metrics["mean_one_step_dynamics_error"].get<double>() << "," << near_cos << ","
                << far_cos << "\n";
        }
        json jcfg{{"command", "sweep"},
                  {"parameter", sweep_param},
                  {"grid", sweep_grid},
                  {"out", sweep_opts.out}};
        write_json_file(jcfg, sweep_opts.out + "/config.json");
        std::cout << "sweep written to " << sweep_opts.out << "/sweep.csv\n";
        return kExitOk;
    }

    if (vs->parsed()) {
        apply_config_defaults(vs, vs_config);
        ensure_dir(vs_out);
        const auto net = sgp::load_score_net(vs_score);
        const auto raw = sgp::load_dataset(vs_data);
        const auto stats = compute_stats(raw);
        const auto points = sgp::PointSet::from_dataset(normalize(raw, stats));
        const auto report = validate_against_exact(net, points, net.schedule, vs_probes, vs_seed);
        json levels = json::array();
        for (const auto& lv : report.levels) {
            levels.push_back({{"level", lv.level},
                              {"sigma", lv.sigma},
                              {"mean_cos", lv.mean_cos},
                              {"weighted_cos", lv.weighted_cos},
                              {"mean_rel_mag_err", lv.mean_rel_mag_err},
                              {"far_mean_cos", lv.far_mean_cos}});
        }
        write_json_file(json{{"levels", levels}}, vs_out + "/metrics.json");
        json jcfg{{"command", "validate-score"}, {"score", vs_score},   {"data", vs_data},
                  {"out", vs_out},               {"probes", vs_probes}, {"seed", vs_seed}};
        write_json_file(jcfg, vs_out + "/config.json");
        for (const auto& lv : report.levels) {
            std::cout << "sigma " << lv.sigma << ": cos " << lv.mean_cos << ", far cos "
                      << lv.far_mean_cos << "\n";
        }
        return kExitOk;
    }

    if (st->parsed()) {
        apply_config_defaults(st, st_config);
        ensure_dir(st_out);
        const auto raw = sgp::load_dataset(st_data);
        const auto stats = compute_stats(raw);
        const auto points = sgp::PointSet::from_dataset(normalize(raw, stats));
        const auto schedule =
            make_schedule(st_smax, st_smin, st_levels, sgp::ScheduleKind::Geometric);

        sgp::ScoreNet net;
        bool use_net = false;
        if (!st_score.empty()) {
            net = sgp::load_score_net(st_score);
            use_net = true;
        }
        sgp::Rng rng(st_seed, 0x574b);
        std::size_t landed = 0;
        const double tol = 1e-3 * schedule.sigma_min();
        for (std::size_t i = 0; i < st_inits; ++i) {
            std::vector<double> z(points.dim);
            for (std::size_t j = 0; j < points.dim; ++j) z[j] = rng.uniform(-1.5, 1.5);
            if (use_net) {
                // ascend the learned log density level by level
                for (std::size_t k = 0; k < net.levels(); ++k) {
                    const double sigma = net.schedule.sigma(k);
                    for (std::size_t it = 0; it < st_inner; ++it) {
                        const auto s = net.eval(z, k);
                        for (std::size_t j = 0; j < z.size(); ++j) {
                            z[j] += st_step * sigma * sigma * s[j];
                        }
                    }
                }
                const auto [idx, half_sq] = nearest_point(z, points);
                (void)idx;
                if (std::sqrt(2.0 * half_sq) <= tol) ++landed;
            } else {
                const auto res = annealed_descent(z, points, schedule, st_inner, st_step);
                if (res.nearest_distance <= tol) ++landed;
            }
        }
        const double rate = static_cast<double>(landed) / static_cast<double>(st_inits);
        json metrics{{"inits", st_inits},
                     {"landed", landed},
                     {"landing_rate", rate},
                     {"tolerance", tol},
                     {"oracle", !use_net}};
        write_json_file(metrics, st_out + "/metrics.json");
        json jcfg{{"command", "stability-test"}, {"data", st_data},      {"score", st_score},
                  {"out", st_out},               {"inits", st_inits},    {"seed", st_seed},
                  {"sigma-max", st_smax},        {"sigma-min", st_smin}, {"levels", st_levels},
                  {"inner", st_inner},           {"step", st_step}};
        write_json_file(jcfg, st_out + "/config.json");
        std::cout << "landing rate " << rate << " (" << landed << "/" << st_inits << ")\n";
        return kExitOk;
    }

    return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return protected_main(argc, argv);
    } catch (const sgp::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const sgp::shape_error& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const sgp::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const sgp::io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
}
