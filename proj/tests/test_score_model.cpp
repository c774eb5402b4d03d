#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "sgp/distance.hpp"
#include "sgp/score_model.hpp"

using namespace sgp;
using namespace sgp::testing;

namespace {

PointSet points_from(std::vector<std::vector<double>> pts) {
    Tensor rows(pts.size(), pts[0].size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = 0; j < pts[i].size(); ++j) rows(i, j) = pts[i][j];
    }
    return PointSet::from_rows(std::move(rows));
}

}  // namespace

TEST_CASE("schedule shapes and endpoints") {
    SUBCASE("cosine 0.2 -> 0.01 over 10 steps") {
        const auto s = make_schedule(0.2, 0.01, 10, ScheduleKind::Cosine);
        CHECK(s.sigmas.front() == 0.2);
        CHECK(s.sigmas.back() == 0.01);
        for (std::size_t k = 1; k < s.levels(); ++k) {
            CHECK(s.sigmas[k] < s.sigmas[k - 1]);
        }
    }
    SUBCASE("single-level schedule") {
        const auto s = make_schedule(0.5, 0.5, 1, ScheduleKind::Geometric);
        REQUIRE(s.levels() == 1);
        CHECK(s.sigmas[0] == 0.5);
        CHECK_THROWS_AS(make_schedule(0.5, 0.1, 1, ScheduleKind::Geometric), config_error);
    }
    SUBCASE("232-level geometric schedule") {
        const auto s = make_schedule(50.0, 0.01, 232, ScheduleKind::Geometric);
        REQUIRE(s.levels() == 232);
        CHECK(s.sigmas.front() == 50.0);
        CHECK(s.sigmas.back() == 0.01);
        for (std::size_t k = 1; k < s.levels(); ++k) {
            CHECK(s.sigmas[k] < s.sigmas[k - 1]);
        }
    }
    SUBCASE("geometric ratio is constant") {
        const auto s = make_schedule(1.0, 0.01, 5, ScheduleKind::Geometric);
        const double r = s.sigmas[1] / s.sigmas[0];
        for (std::size_t k = 1; k < 4; ++k) {
            CHECK(s.sigmas[k + 1] / s.sigmas[k] == doctest::Approx(r).epsilon(1e-9));
        }
    }
}

TEST_CASE("dsm loss vanishes at the single-point analytic optimum") {
    // trunk computes exactly -(z' - z0)/sigma^2; the loss is identically zero
    const double sigma = 0.3;
    const double z0 = 0.7;
    ScoreNet net;
    net.conditioning = Conditioning::Multiplicative;
    net.schedule = make_schedule(sigma, sigma, 1, ScheduleKind::Geometric);
    net.z_stats = NormStats::identity(1);
    net.dim = 1;
    // the score head divides the trunk output by sigma, so the analytic
    // minimizer -(z' - z0)/sigma^2 is the trunk -(z' - z0)/sigma
    net.trunk.widths = {1, 1};
    net.trunk.act = Activation::Tanh;
    net.trunk.params = {-1.0 / sigma, z0 / sigma};
    net.embeddings = Tensor::full(1, 1, 1.0);

    Tensor batch(64, 1);
    std::fill(batch.values.begin(), batch.values.end(), z0);
    Rng rng(3);
    CHECK(dsm_loss(net, batch, 0, rng) == doctest::Approx(0.0).epsilon(1e-18));
}

TEST_CASE("dsm loss of the zero function is the input dimension") {
    const auto schedule = make_schedule(0.4, 0.1, 3, ScheduleKind::Geometric);
    ScoreNetConfig cfg;
    cfg.hidden = {8, 8};
    cfg.seed = 1;
    ScoreNet net = make_score_net(2, schedule, cfg, NormStats::identity(2));
    std::fill(net.trunk.params.begin(), net.trunk.params.end(), 0.0);

    Rng data_rng(9);
    Tensor batch(100000, 2);
    fill_uniform(batch.values, data_rng, -1.0, 1.0);
    Rng rng(4);
    for (std::size_t level = 0; level < 3; ++level) {
        const double loss = dsm_loss(net, batch, level, rng);
        CHECK(loss == doctest::Approx(2.0).epsilon(0.05));
        CHECK(loss >= 0.0);
    }
}

TEST_CASE("dsm loss is nonnegative for random nets") {
    const auto schedule = make_schedule(0.3, 0.05, 4, ScheduleKind::Geometric);
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        ScoreNetConfig cfg;
        cfg.hidden = {16, 16};
        cfg.seed = 100 + trial;
        cfg.conditioning = trial % 2 == 0 ? Conditioning::Multiplicative : Conditioning::Concat;
        ScoreNet net = make_score_net(3, schedule, cfg, NormStats::identity(3));
        Tensor batch(32, 3);
        fill_uniform(batch.values, rng, -1.0, 1.0);
        CHECK(dsm_loss(net, batch, rng.uniform_index(4), rng) >= 0.0);
    }
}

TEST_CASE("dsm loss rejects out-of-range levels") {
    const auto schedule = make_schedule(0.3, 0.05, 4, ScheduleKind::Geometric);
    ScoreNetConfig cfg;
    cfg.hidden = {8};
    ScoreNet net = make_score_net(2, schedule, cfg, NormStats::identity(2));
    Tensor batch(4, 2);
    Rng rng(1);
    CHECK_THROWS_AS(dsm_loss(net, batch, 4, rng), config_error);
    CHECK_THROWS_AS(net.eval(std::vector<double>{0.0, 0.0}, 7), config_error);
}

TEST_CASE("zero embeddings gate the whole network to zero") {
    const auto schedule = make_schedule(0.3, 0.05, 4, ScheduleKind::Geometric);
    ScoreNetConfig cfg;
    cfg.hidden = {32, 32};
    cfg.seed = 17;
    cfg.conditioning = Conditioning::Multiplicative;
    ScoreNet net = make_score_net(3, schedule, cfg, NormStats::identity(3));
    std::fill(net.embeddings.values.begin(), net.embeddings.values.end(), 0.0);
    Rng rng(2);
    for (int i = 0; i < 10; ++i) {
        std::vector<double> z(3);
        fill_uniform(z, rng, -2.0, 2.0);
        for (double v : net.eval(z, rng.uniform_index(4))) {
            CHECK(v == 0.0);
        }
    }
}

TEST_CASE("eval is pure: repeated calls agree") {
    const auto schedule = make_schedule(0.3, 0.05, 4, ScheduleKind::Geometric);
    ScoreNetConfig cfg;
    cfg.hidden = {16, 16};
    cfg.seed = 23;
    const ScoreNet net = make_score_net(2, schedule, cfg, NormStats::identity(2));
    const std::vector<double> z{0.4, -0.8};
    const auto a = net.eval(z, 2);
    const auto b = net.eval(z, 2);
    CHECK(a == b);
}

TEST_CASE("training is deterministic per seed") {
    const PointSet pts = points_from({{-0.5}, {0.5}});
    const auto schedule = make_schedule(0.5, 0.05, 3, ScheduleKind::Geometric);
    ScoreNetConfig net_cfg;
    net_cfg.hidden = {16, 16};
    net_cfg.seed = 4;
    ScoreTrainConfig train_cfg;
    train_cfg.steps = 50;
    train_cfg.batch = 16;
    train_cfg.seed = 11;
    const ScoreNet a = train_score(pts, schedule, net_cfg, train_cfg, NormStats::identity(1));
    const ScoreNet b = train_score(pts, schedule, net_cfg, train_cfg, NormStats::identity(1));
    CHECK(a.trunk.params == b.trunk.params);
    CHECK(a.embeddings.values == b.embeddings.values);
}

TEST_CASE("trained score matches the exact oracle on a 2-point set") {
    const PointSet pts = points_from({{-0.5}, {0.5}});
    const auto schedule = make_schedule(0.4, 0.05, 5, ScheduleKind::Geometric);
    ScoreNetConfig net_cfg;
    net_cfg.hidden = {64, 64};
    net_cfg.seed = 3;
    ScoreTrainConfig train_cfg;
    train_cfg.steps = 2000;
    train_cfg.batch = 512;
    train_cfg.lr = 5e-3;
    train_cfg.seed = 7;
    const ScoreNet net = train_score(pts, schedule, net_cfg, train_cfg, NormStats::identity(1));

    // In 1-D the plain cosine is a sign statistic, so probes that land where
    // the true score crosses zero contribute coin flips no matter how good
    // the fit is; the |s*|-weighted cosine measures agreement where the
    // field actually pushes.
    const auto report = validate_against_exact(net, pts, schedule, 400, 99);
    REQUIRE(report.levels.size() == 5);
    for (const auto& lv : report.levels) {
        CHECK(lv.weighted_cos > 0.99);
        CHECK(lv.mean_rel_mag_err < 0.5);
    }
}

TEST_CASE("single-point dataset: learned score points at the data") {
    const PointSet pts = points_from({{0.3, -0.2}});
    const auto schedule = make_schedule(0.4, 0.1, 3, ScheduleKind::Geometric);
    ScoreNetConfig net_cfg;
    net_cfg.hidden = {32, 32};
    net_cfg.seed = 5;
    ScoreTrainConfig train_cfg;
    train_cfg.steps = 1500;
    train_cfg.batch = 64;
    train_cfg.lr = 3e-3;
    train_cfg.seed = 2;
    const ScoreNet net = train_score(pts, schedule, net_cfg, train_cfg, NormStats::identity(2));
    const auto report = validate_against_exact(net, pts, schedule, 300, 17);
    for (const auto& lv : report.levels) {
        CHECK(lv.mean_cos > 0.99);
    }
}

TEST_CASE("untrained net has near-zero agreement with the oracle") {
    const PointSet pts = points_from({{-0.6, 0.1}, {0.2, 0.4}, {0.5, -0.5}});
    const auto schedule = make_schedule(0.4, 0.05, 4, ScheduleKind::Geometric);
    ScoreNetConfig cfg;
    cfg.hidden = {32, 32};
    cfg.seed = 31;
    const ScoreNet net = make_score_net(2, schedule, cfg, NormStats::identity(2));
    const auto report = validate_against_exact(net, pts, schedule, 400, 5);
    double acc = 0.0;
    for (const auto& lv : report.levels) acc += lv.mean_cos;
    CHECK(std::abs(acc / 4.0) < 0.25);
}

TEST_CASE("far-probe accuracy degrades most at the smallest noise level") {
    const PointSet pts = points_from({{-0.8, -0.3}, {-0.2, 0.6}, {0.1, -0.5}, {0.6, 0.2}, {0.7, -0.7}});
    const auto schedule = make_schedule(0.5, 0.05, 5, ScheduleKind::Geometric);
    ScoreNetConfig net_cfg;
    net_cfg.hidden = {64, 64, 64};
    net_cfg.seed = 12;
    ScoreTrainConfig train_cfg;
    train_cfg.steps = 5000;
    train_cfg.batch = 256;
    train_cfg.lr = 5e-3;
    train_cfg.seed = 21;
    const ScoreNet net = train_score(pts, schedule, net_cfg, train_cfg, NormStats::identity(2));
    const auto report = validate_against_exact(net, pts, schedule, 400, 77);
    // near-data agreement is solid everywhere
    for (const auto& lv : report.levels) {
        CHECK(lv.mean_cos > 0.9);
    }
    // the broadest smoothing level generalizes best far from data
    CHECK(report.levels.front().far_mean_cos > report.levels.back().far_mean_cos);
}

TEST_CASE("score checkpoint round trip preserves evaluations") {
    const PointSet pts = points_from({{-0.5}, {0.5}});
    const auto schedule = make_schedule(0.5, 0.05, 3, ScheduleKind::Geometric);
    ScoreNetConfig net_cfg;
    net_cfg.hidden = {16, 16};
    net_cfg.seed = 4;
    ScoreTrainConfig train_cfg;
    train_cfg.steps = 100;
    train_cfg.batch = 16;
    train_cfg.seed = 11;
    const ScoreNet net = train_score(pts, schedule, net_cfg, train_cfg, NormStats::identity(1));

    const auto stem = (std::filesystem::temp_directory_path() / "sgp_score_ckpt").string();
    save_score_net(net, stem, 100);
    const ScoreNet loaded = load_score_net(stem);
    CHECK(score_net_trained_steps(stem) == 100);
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
        const std::vector<double> z{rng.uniform(-1.0, 1.0)};
        const std::size_t level = rng.uniform_index(3);
        CHECK(net.eval(z, level) == loaded.eval(z, level));
    }
    std::filesystem::remove(stem + ".manifest.json");
    std::filesystem::remove(stem + ".weights.bin");
}

TEST_CASE("concat conditioning trains too") {
    const PointSet pts = points_from({{-0.5}, {0.5}});
    const auto schedule = make_schedule(0.4, 0.1, 3, ScheduleKind::Geometric);
    ScoreNetConfig net_cfg;
    net_cfg.hidden = {32, 32};
    net_cfg.conditioning = Conditioning::Concat;
    net_cfg.seed = 9;
    ScoreTrainConfig train_cfg;
    train_cfg.steps = 2000;
    train_cfg.batch = 512;
    train_cfg.lr = 5e-3;
    train_cfg.seed = 13;
    const ScoreNet net = train_score(pts, schedule, net_cfg, train_cfg, NormStats::identity(1));
    const auto report = validate_against_exact(net, pts, schedule, 300, 55);
    for (const auto& lv : report.levels) {
        CHECK(lv.weighted_cos > 0.95);
    }
}
