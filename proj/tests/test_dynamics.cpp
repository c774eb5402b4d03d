#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "sgp/dynamics_model.hpp"

using namespace sgp;
using namespace sgp::testing;

namespace {

// x' = x + u in 2-D, uniformly sampled
TransitionDataset integrator_data(std::size_t count, std::uint64_t seed) {
    TransitionDataset d;
    d.n = 2;
    d.m = 2;
    d.states = Tensor(count, 2);
    d.actions = Tensor(count, 2);
    d.next_states = Tensor(count, 2);
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            d.states(i, j) = rng.uniform(-1.0, 1.0);
            d.actions(i, j) = rng.uniform(-0.2, 0.2);
            d.next_states(i, j) = d.states(i, j) + d.actions(i, j);
        }
    }
    return d;
}

DynamicsModel identity_delta_model(std::size_t n, std::size_t m) {
    DynamicsModel model;
    model.n = n;
    model.m = m;
    model.delta_mode = true;
    model.z_stats = NormStats::identity(n + m);
    model.out_stats = NormStats::identity(n);
    model.net = mlp_init({n + m, 8, n}, Activation::Tanh, 0);
    std::fill(model.net.params.begin(), model.net.params.end(), 0.0);
    return model;
}

}  // namespace

TEST_CASE("delta-mode model with zero network is the identity on states") {
    const DynamicsModel model = identity_delta_model(3, 2);
    const std::vector<double> x{0.4, -0.7, 1.2};
    const std::vector<double> u{0.1, -0.1};
    const auto next = model.predict(x, u);
    CHECK(next == x);
    CHECK(model.predict(x, u) == next);  // repeated call identical
}

TEST_CASE("learned integrator dynamics reach small validation error") {
    const TransitionDataset data = integrator_data(4000, 11);
    DynamicsConfig cfg;
    cfg.hidden = {32, 32};
    cfg.seed = 1;
    TrainConfig tc;
    tc.steps = 3000;
    tc.batch = 128;
    tc.lr = 3e-3;
    tc.seed = 5;
    const DynamicsModel model = train_dynamics(data, cfg, tc);
    CHECK(model.val_rmse < 1e-2);  // normalized target space

    // raw-space spot check
    const std::vector<double> x{0.3, -0.4};
    const std::vector<double> u{0.15, -0.05};
    const auto next = model.predict(x, u);
    CHECK(next[0] == doctest::Approx(0.45).epsilon(0.05));
    CHECK(next[1] == doctest::Approx(-0.45).epsilon(0.05));
}

TEST_CASE("identical transitions are memorized") {
    TransitionDataset d;
    d.n = 1;
    d.m = 1;
    d.states = Tensor::full(50, 1, 0.3);
    d.actions = Tensor::full(50, 1, -0.2);
    d.next_states = Tensor::full(50, 1, 0.9);
    DynamicsConfig cfg;
    cfg.hidden = {8};
    TrainConfig tc;
    tc.steps = 200;
    tc.batch = 16;
    tc.val_fraction = 0.0;
    const DynamicsModel model = train_dynamics(d, cfg, tc);
    const auto next = model.predict(std::vector<double>{0.3}, std::vector<double>{-0.2});
    CHECK(next[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("cartpole-shaped network trains stably") {
    // 4 state dims, 1 action dim, hidden (64, 64, 32)
    TransitionDataset d;
    d.n = 4;
    d.m = 1;
    const std::size_t count = 2000;
    d.states = Tensor(count, 4);
    d.actions = Tensor(count, 1);
    d.next_states = Tensor(count, 4);
    Rng rng(3);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < 4; ++j) d.states(i, j) = rng.uniform(-2.0, 2.0);
        d.actions(i, 0) = rng.uniform(-10.0, 10.0);
        for (std::size_t j = 0; j < 4; ++j) {
            d.next_states(i, j) = d.states(i, j) + 0.05 * rng.uniform(-1.0, 1.0);
        }
    }
    DynamicsConfig cfg;
    cfg.hidden = {64, 64, 32};
    TrainConfig tc;
    tc.steps = 400;
    tc.batch = 128;
    const DynamicsModel model = train_dynamics(d, cfg, tc);
    CHECK(std::isfinite(model.val_rmse));
}

TEST_CASE("exploding learning rate aborts with a numeric error") {
    const TransitionDataset data = integrator_data(200, 2);
    DynamicsConfig cfg;
    cfg.hidden = {8};
    TrainConfig tc;
    tc.steps = 50;
    tc.lr = 1e200;
    CHECK_THROWS_AS(train_dynamics(data, cfg, tc), numeric_error);
}

TEST_CASE("predict gradient matches finite differences through normalization") {
    const TransitionDataset data = integrator_data(500, 21);
    DynamicsConfig cfg;
    cfg.hidden = {16, 16};
    TrainConfig tc;
    tc.steps = 300;
    tc.batch = 64;
    const DynamicsModel model = train_dynamics(data, cfg, tc);

    Rng rng(9);
    Tensor w(1, 2);
    fill_uniform(w.values, rng, -1.0, 1.0);
    const std::vector<double> x{0.2, -0.3};
    const std::vector<double> u{0.05, 0.1};

    Tape tape;
    const auto params = model.register_params(tape);
    Tensor xt(1, 2), ut(1, 2);
    xt.values = x;
    ut.values = u;
    const auto xid = tape.leaf(xt);
    const auto uid = tape.leaf(ut);
    const auto next = model.predict_on_tape(tape, params, xid, uid);
    const auto scalar = tape.dot_const(next, w);
    tape.backward(scalar);

    const auto fx = [&](const std::vector<double>& q) {
        const auto out = model.predict(q, u);
        return out[0] * w.values[0] + out[1] * w.values[1];
    };
    const auto fu = [&](const std::vector<double>& q) {
        const auto out = model.predict(x, q);
        return out[0] * w.values[0] + out[1] * w.values[1];
    };
    CHECK(rel_error(tape.grad(xid).values, fd_gradient(fx, x)) < 1e-6);
    CHECK(rel_error(tape.grad(uid).values, fd_gradient(fu, u)) < 1e-6);
}

TEST_CASE("ensembles: member count, seed isolation, determinism") {
    const TransitionDataset data = integrator_data(400, 31);
    DynamicsConfig cfg;
    cfg.hidden = {8, 8};
    cfg.seed = 100;
    TrainConfig tc;
    tc.steps = 100;
    tc.batch = 32;
    tc.seed = 7;

    const Ensemble six = train_ensemble(data, 6, cfg, tc);
    CHECK(six.size() == 6);
    const Ensemble two = train_ensemble(data, 2, cfg, tc);
    CHECK(two.size() == 2);

    // member i depends only on (seed_i, data): first two of six match the pair
    CHECK(six.members[0].net.params == two.members[0].net.params);
    CHECK(six.members[1].net.params == two.members[1].net.params);
    bool differ = false;
    for (std::size_t i = 0; i < six.members[0].net.params.size(); ++i) {
        differ |= six.members[0].net.params[i] != six.members[1].net.params[i];
    }
    CHECK(differ);

    CHECK_THROWS_AS(train_ensemble(data, 1, cfg, tc), config_error);
}

TEST_CASE("ensemble of six writes six member checkpoints") {
    const TransitionDataset data = integrator_data(300, 41);
    DynamicsConfig cfg;
    cfg.hidden = {8};
    TrainConfig tc;
    tc.steps = 50;
    tc.batch = 32;
    const Ensemble ens = train_ensemble(data, 6, cfg, tc);
    const auto stem = (std::filesystem::temp_directory_path() / "sgp_ens").string();
    save_ensemble(ens, stem);
    for (int i = 0; i < 6; ++i) {
        CHECK(std::filesystem::exists(stem + ".member" + std::to_string(i) + ".manifest.json"));
        CHECK(std::filesystem::exists(stem + ".member" + std::to_string(i) + ".weights.bin"));
    }
    const Ensemble loaded = load_ensemble(stem);
    CHECK(loaded.size() == 6);
    const std::vector<double> x{0.1, 0.2};
    const std::vector<double> u{0.0, -0.1};
    CHECK(ensemble_variance(loaded, x, u) == doctest::Approx(ensemble_variance(ens, x, u)));
    for (int i = 0; i < 6; ++i) {
        std::filesystem::remove(stem + ".member" + std::to_string(i) + ".manifest.json");
        std::filesystem::remove(stem + ".member" + std::to_string(i) + ".weights.bin");
    }
    std::filesystem::remove(stem + ".ensemble.json");
}

TEST_CASE("degenerate identical members have zero variance") {
    Ensemble ens;
    ens.members.push_back(identity_delta_model(2, 1));
    ens.members.push_back(identity_delta_model(2, 1));
    const std::vector<double> x{0.5, -0.5};
    const std::vector<double> u{0.3};
    CHECK(ensemble_variance(ens, x, u) == 0.0);
}

TEST_CASE("two members differing by a constant in one output dim") {
    const std::size_t n = 3;
    Ensemble ens;
    ens.members.push_back(identity_delta_model(n, 1));
    ens.members.push_back(identity_delta_model(n, 1));
    // shift member 2's output bias in dim 0 by c
    const double c = 0.8;
    auto bias = ens.members[1].net.bias(1);
    bias[0] = c;
    const std::vector<double> x{0.1, 0.2, 0.3};
    const std::vector<double> u{0.0};
    // population variance of {a, a+c} is c^2/4 in one of n dims
    CHECK(ensemble_variance(ens, x, u) == doctest::Approx(c * c / (4.0 * n)).epsilon(1e-12));
}

TEST_CASE("variance is nonnegative and zero iff members agree") {
    const TransitionDataset data = integrator_data(300, 51);
    DynamicsConfig cfg;
    cfg.hidden = {8, 8};
    TrainConfig tc;
    tc.steps = 80;
    tc.batch = 32;
    const Ensemble ens = train_ensemble(data, 3, cfg, tc);
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
        const std::vector<double> x{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        const std::vector<double> u{rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
        CHECK(ensemble_variance(ens, x, u) >= 0.0);
    }
}

TEST_CASE("variance tape value and gradient agree with the plain path") {
    const TransitionDataset data = integrator_data(400, 61);
    DynamicsConfig cfg;
    cfg.hidden = {8, 8};
    TrainConfig tc;
    tc.steps = 150;
    tc.batch = 64;
    const Ensemble ens = train_ensemble(data, 2, cfg, tc);

    const std::vector<double> x{0.2, -0.1};
    const std::vector<double> u{0.1, 0.05};
    Tape tape;
    const auto params = ens.register_params(tape);
    Tensor xt(1, 2), ut(1, 2);
    xt.values = x;
    ut.values = u;
    const auto xid = tape.leaf(xt);
    const auto uid = tape.leaf(ut);
    const auto var = ens.variance_on_tape(tape, params, xid, uid);
    CHECK(tape.value(var).values[0] == doctest::Approx(ensemble_variance(ens, x, u)).epsilon(1e-12));

    tape.backward(var);
    const auto f = [&](const std::vector<double>& q) { return ensemble_variance(ens, q, u); };
    CHECK(rel_error(tape.grad(xid).values, fd_gradient(f, x)) < 1e-6);
}

TEST_CASE("bootstrap mode resamples and still trains") {
    const TransitionDataset data = integrator_data(400, 71);
    DynamicsConfig cfg;
    cfg.hidden = {8, 8};
    TrainConfig tc;
    tc.steps = 100;
    tc.batch = 32;
    const Ensemble ens = train_ensemble(data, 2, cfg, tc, EnsembleMode::Bootstrap);
    CHECK(ens.mode == EnsembleMode::Bootstrap);
    bool differ = false;
    for (std::size_t i = 0; i < ens.members[0].net.params.size(); ++i) {
        differ |= ens.members[0].net.params[i] != ens.members[1].net.params[i];
    }
    CHECK(differ);
}

TEST_CASE("dynamics checkpoint round trip") {
    const TransitionDataset data = integrator_data(300, 81);
    DynamicsConfig cfg;
    cfg.hidden = {8, 8};
    TrainConfig tc;
    tc.steps = 100;
    tc.batch = 32;
    const DynamicsModel model = train_dynamics(data, cfg, tc);
    const auto stem = (std::filesystem::temp_directory_path() / "sgp_dyn").string();
    save_dynamics(model, stem, 100);
    const DynamicsModel loaded = load_dynamics(stem);
    const std::vector<double> x{0.3, 0.1};
    const std::vector<double> u{-0.1, 0.2};
    CHECK(loaded.predict(x, u) == model.predict(x, u));
    CHECK(loaded.delta_mode == model.delta_mode);
    std::filesystem::remove(stem + ".manifest.json");
    std::filesystem::remove(stem + ".weights.bin");
}

TEST_CASE("absolute-mode dynamics also train") {
    const TransitionDataset data = integrator_data(2000, 91);
    DynamicsConfig cfg;
    cfg.hidden = {32, 32};
    cfg.delta_mode = false;
    TrainConfig tc;
    tc.steps = 2000;
    tc.batch = 128;
    tc.lr = 3e-3;
    const DynamicsModel model = train_dynamics(data, cfg, tc);
    const auto next = model.predict(std::vector<double>{0.3, -0.4}, std::vector<double>{0.15, -0.05});
    CHECK(next[0] == doctest::Approx(0.45).epsilon(0.1));
    CHECK(next[1] == doctest::Approx(-0.45).epsilon(0.1));
}
