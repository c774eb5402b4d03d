#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sgp/dataset.hpp"
#include "sgp/environments.hpp"

using namespace sgp;
using namespace sgp::testing;

namespace {

TransitionDataset random_dataset(std::size_t count, std::size_t n, std::size_t m, std::uint64_t seed) {
    TransitionDataset d;
    d.n = n;
    d.m = m;
    d.states = Tensor(count, n);
    d.actions = Tensor(count, m);
    d.next_states = Tensor(count, n);
    Rng rng(seed);
    fill_uniform(d.states.values, rng, -3.0, 3.0);
    fill_uniform(d.actions.values, rng, -1.0, 1.0);
    fill_uniform(d.next_states.values, rng, -3.0, 3.0);
    return d;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("population std convention on two points") {
    Tensor rows(2, 1);
    rows.values = {0.0, 2.0};
    const NormStats s = NormStats::compute(rows);
    CHECK(s.mean[0] == doctest::Approx(1.0));
    CHECK(s.std_dev[0] == doctest::Approx(1.0));
}

TEST_CASE("constant column normalizes to zeros") {
    TransitionDataset d = random_dataset(50, 2, 1, 3);
    for (std::size_t i = 0; i < d.count(); ++i) {
        d.states(i, 1) = 7.5;
        d.next_states(i, 1) = 7.5;
    }
    const DatasetStats stats = compute_stats(d);
    const TransitionDataset nd = normalize(d, stats);
    for (std::size_t i = 0; i < d.count(); ++i) {
        CHECK(nd.states(i, 1) == 0.0);
    }
}

TEST_CASE("normalize / denormalize round trip") {
    const TransitionDataset d = random_dataset(200, 3, 2, 9);
    const DatasetStats stats = compute_stats(d);
    const TransitionDataset nd = normalize(d, stats);
    // normalized states have ~zero mean, ~unit std
    const NormStats check = NormStats::compute(nd.states);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::abs(check.mean[j]) < 0.2);
        CHECK(check.std_dev[j] == doctest::Approx(1.0).epsilon(0.2));
    }
    const TransitionDataset rd = denormalize(nd, stats);
    for (std::size_t i = 0; i < d.states.size(); ++i) {
        CHECK(std::abs(rd.states.values[i] - d.states.values[i]) < 1e-12);
        CHECK(std::abs(rd.next_states.values[i] - d.next_states.values[i]) < 1e-12);
    }
    for (std::size_t i = 0; i < d.actions.size(); ++i) {
        CHECK(std::abs(rd.actions.values[i] - d.actions.values[i]) < 1e-12);
    }
}

TEST_CASE("dataset file round trip is bitwise") {
    const TransitionDataset d = random_dataset(1000, 4, 2, 77);
    const auto path = temp_file("sgp_roundtrip.sgpd");
    save_dataset(d, path.string());
    const TransitionDataset r = load_dataset(path.string());
    REQUIRE(r.count() == d.count());
    REQUIRE(r.n == d.n);
    REQUIRE(r.m == d.m);
    CHECK(r.states.values == d.states.values);
    CHECK(r.actions.values == d.actions.values);
    CHECK(r.next_states.values == d.next_states.values);
    std::filesystem::remove(path);
}

TEST_CASE("empty-action dataset round-trips") {
    TransitionDataset d = random_dataset(10, 3, 0, 5);
    const auto path = temp_file("sgp_noaction.sgpd");
    save_dataset(d, path.string());
    const TransitionDataset r = load_dataset(path.string());
    CHECK(r.m == 0);
    CHECK(r.states.values == d.states.values);
    std::filesystem::remove(path);
}

TEST_CASE("corrupted header is a format error, not a crash") {
    const TransitionDataset d = random_dataset(5, 2, 1, 1);
    const auto path = temp_file("sgp_corrupt.sgpd");
    save_dataset(d, path.string());
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(1);
        f.put('X');
    }
    CHECK_THROWS_AS(load_dataset(path.string()), io_error);

    // truncation mid-payload
    save_dataset(d, path.string());
    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(load_dataset(path.string()), io_error);
    std::filesystem::remove(path);
}

TEST_CASE("collect_random is deterministic and respects bounds") {
    PitEnv env;
    const TransitionDataset a = collect_random(env, 500, 42);
    const TransitionDataset b = collect_random(env, 500, 42);
    CHECK(a.states.values == b.states.values);
    CHECK(a.actions.values == b.actions.values);
    CHECK(a.next_states.values == b.next_states.values);

    const Box sbox = env.state_box();
    const Box abox = env.action_box();
    for (std::size_t i = 0; i < a.count(); ++i) {
        CHECK(sbox.contains(a.state(i)));
        CHECK(abox.contains(a.action(i)));
    }
}

TEST_CASE("pit data collection excludes the hole") {
    PitEnv env;
    const TransitionDataset d = collect_random(env, 2000, 7);
    for (std::size_t i = 0; i < d.count(); ++i) {
        CHECK(!pit_inside_hole(env.params, d.state(i)));
    }
}

TEST_CASE("cartpole collection stays in the configured box") {
    CartPoleEnv env;
    const TransitionDataset d = collect_random(env, 2000, 3);
    const Box box = env.state_box();
    for (std::size_t i = 0; i < d.count(); ++i) {
        CHECK(box.contains(d.state(i)));
        CHECK(std::abs(d.action(i)[0]) <= env.force_limit);
    }
}

TEST_CASE("collect_random rejects zero count") {
    PitEnv env;
    CHECK_THROWS_AS(collect_random(env, 0, 1), config_error);
}

TEST_CASE("point set from dataset concatenates state and action") {
    const TransitionDataset d = random_dataset(20, 2, 1, 13);
    const PointSet ps = PointSet::from_dataset(d);
    CHECK(ps.dim == 3);
    CHECK(ps.count() == 20);
    CHECK(ps.point(4)[0] == d.states(4, 0));
    CHECK(ps.point(4)[2] == d.actions(4, 0));
}

TEST_CASE("csv export writes the documented header") {
    const TransitionDataset d = random_dataset(3, 2, 1, 21);
    const auto path = temp_file("sgp_export.csv");
    export_csv(d, path.string());
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "x0,x1,u0,xp0,xp1");
    std::filesystem::remove(path);
}
