#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sgp/distance.hpp"
#include "sgp/schedule.hpp"

using namespace sgp;
using namespace sgp::testing;

namespace {

PointSet points_1d(std::initializer_list<double> xs) {
    Tensor rows(xs.size(), 1);
    std::size_t i = 0;
    for (double x : xs) rows.values[i++] = x;
    return PointSet::from_rows(std::move(rows));
}

PointSet random_points(std::size_t count, std::size_t dim, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor rows(count, dim);
    fill_uniform(rows.values, rng, lo, hi);
    return PointSet::from_rows(std::move(rows));
}

}  // namespace

TEST_CASE("softmin over a single point is half squared distance") {
    const PointSet d = points_1d({0.0});
    for (double sigma : {0.05, 0.3, 1.0}) {
        const std::vector<double> z{2.0};
        CHECK(softmin_distance_sq(z, d, sigma, 0.0) == doctest::Approx(2.0).epsilon(1e-12));
    }
}

TEST_CASE("softmin symmetric two-point value") {
    const PointSet d = points_1d({-1.0, 1.0});
    const double sigma = 0.5;
    const std::vector<double> z{0.0};
    const double c = default_positivity_offset(sigma, 2);
    CHECK(softmin_distance_sq(z, d, sigma, c) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmin approaches the exact min as sigma -> 0") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const PointSet d = random_points(20, 3, rng);
        std::vector<double> z(3);
        fill_uniform(z, rng, -1.5, 1.5);
        const double sigma = 1e-3;
        // brute-force oracle
        const auto [idx, min_half_sq] = nearest_point(z, d);
        (void)idx;
        const double val = softmin_distance_sq(z, d, sigma, 0.0);
        CHECK(std::abs(val - min_half_sq) <= 1e-6 + default_positivity_offset(sigma, d.count()));
        // with the default offset the value is nonnegative and sandwiched
        const double c = default_positivity_offset(sigma, d.count());
        const double vc = softmin_distance_sq(z, d, sigma, c);
        CHECK(vc >= 0.0);
        CHECK(vc >= min_half_sq);
        CHECK(vc <= min_half_sq + c);
    }
}

TEST_CASE("softmin sandwich holds at moderate sigma") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t dim = 1 + rng.uniform_index(5);
        const PointSet d = random_points(2 + rng.uniform_index(40), dim, rng);
        std::vector<double> z(dim);
        fill_uniform(z, rng, -2.0, 2.0);
        const double sigma = rng.uniform(0.05, 1.0);
        const auto [idx, min_half_sq] = nearest_point(z, d);
        (void)idx;
        const double v0 = softmin_distance_sq(z, d, sigma, 0.0);
        const double slack = default_positivity_offset(sigma, d.count());
        CHECK(v0 <= min_half_sq + 1e-12);
        CHECK(v0 >= min_half_sq - slack - 1e-12);
    }
}

TEST_CASE("perturbed log likelihood of a single point at its mode") {
    const PointSet d = points_1d({0.7});
    for (double sigma : {0.1, 0.5}) {
        const std::vector<double> z{0.7};
        CHECK(perturbed_log_likelihood(z, d, sigma) ==
              doctest::Approx(-0.5 * std::log(2.0 * kPi * sigma * sigma)).epsilon(1e-12));
    }
}

TEST_CASE("likelihood is higher near mass than at the symmetric midpoint") {
    const PointSet d = points_1d({-1.0, 1.0});
    const double sigma = 0.2;
    const std::vector<double> mid{0.0};
    const std::vector<double> near{0.95};
    CHECK(perturbed_log_likelihood(near, d, sigma) > perturbed_log_likelihood(mid, d, sigma));
}

TEST_CASE("residual between scaled likelihood and softmin is constant in z") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t dim = 1 + rng.uniform_index(8);
        const std::size_t count = 2 + rng.uniform_index(99);
        const PointSet d = random_points(count, dim, rng);
        const double sigma = rng.uniform(0.05, 0.8);
        double first = 0.0;
        double lo = 0.0;
        double hi = 0.0;
        for (int i = 0; i < 25; ++i) {
            std::vector<double> z(dim);
            fill_uniform(z, rng, -2.0, 2.0);
            const double resid = -sigma * sigma * perturbed_log_likelihood(z, d, sigma) -
                                 softmin_distance_sq(z, d, sigma, 0.0);
            if (i == 0) {
                first = resid;
                lo = hi = resid;
            } else {
                lo = std::min(lo, resid);
                hi = std::max(hi, resid);
            }
        }
        CHECK(hi - lo < 1e-8);
        // and the constant has the closed form sigma^2 (log N + d/2 log(2 pi sigma^2))
        const double expect =
            sigma * sigma *
            (std::log(static_cast<double>(count)) + 0.5 * dim * std::log(2.0 * kPi * sigma * sigma));
        CHECK(first == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("exact score closed forms") {
    const PointSet single = points_1d({0.4});
    const double sigma = 0.3;
    const std::vector<double> z{1.0};
    const auto s = exact_score(z, single, sigma);
    CHECK(s[0] == doctest::Approx((0.4 - 1.0) / (sigma * sigma)).epsilon(1e-12));

    const PointSet pair = points_1d({-1.0, 1.0});
    const std::vector<double> mid{0.0};
    CHECK(exact_score(mid, pair, sigma)[0] == doctest::Approx(0.0));
}

TEST_CASE("exact score matches finite differences of the log likelihood") {
    Rng rng(99);
    int checked = 0;
    for (int trial = 0; trial < 25; ++trial) {
        const PointSet d = random_points(50, 4, rng);
        const double sigma = rng.uniform(0.05, 0.6);
        for (int probe = 0; probe < 4; ++probe) {
            std::vector<double> z(4);
            fill_uniform(z, rng, -1.2, 1.2);
            const auto s = exact_score(z, d, sigma);
            const auto fd = fd_gradient(
                [&](const std::vector<double>& q) { return perturbed_log_likelihood(q, d, sigma); }, z);
            CHECK(rel_error(s, fd) < 1e-6);
            ++checked;
        }
    }
    CHECK(checked == 100);
}

TEST_CASE("lipschitz estimate on hand computable cases") {
    SUBCASE("linear function has its slope") {
        const std::vector<std::vector<double>> pts{{0.0}, {1.0}, {2.0}};
        const std::vector<double> errs{0.0, 2.0, 4.0};
        CHECK(lipschitz_estimate(pts, errs) == doctest::Approx(2.0));
    }
    SUBCASE("constant errors give zero") {
        const std::vector<std::vector<double>> pts{{0.0}, {0.5}, {2.0}};
        const std::vector<double> errs{1.0, 1.0, 1.0};
        CHECK(lipschitz_estimate(pts, errs) == doctest::Approx(0.0));
    }
    SUBCASE("sin(5z) on a dense grid is close to 5") {
        std::vector<std::vector<double>> pts;
        std::vector<double> errs;
        for (int i = 0; i <= 100; ++i) {
            const double z = 0.01 * i;
            pts.push_back({z});
            errs.push_back(std::sin(5.0 * z));
        }
        const double est = lipschitz_estimate(pts, errs);
        CHECK(est == doctest::Approx(5.0).epsilon(0.02));
    }
    SUBCASE("duplicate points with differing errors are an error") {
        const std::vector<std::vector<double>> pts{{1.0}, {1.0}};
        const std::vector<double> errs{0.0, 1.0};
        CHECK_THROWS_AS(lipschitz_estimate(pts, errs), numeric_error);
    }
    SUBCASE("quantile and inflation options") {
        const std::vector<std::vector<double>> pts{{0.0}, {1.0}, {2.0}};
        const std::vector<double> errs{0.0, 2.0, 4.0};
        LipschitzOptions opts;
        opts.inflation = 1.1;
        CHECK(lipschitz_estimate(pts, errs, opts) == doctest::Approx(2.2));
    }
}

TEST_CASE("error bound closed forms") {
    SUBCASE("single point, C = 0, unit Lipschitz") {
        const PointSet d = points_1d({0.5});
        for (double z : {-1.0, 0.2, 3.0}) {
            const std::vector<double> q{z};
            CHECK(error_bound(q, d, 0.25, 0.0, 1.0, 0.0) ==
                  doctest::Approx(std::abs(z - 0.5)).epsilon(1e-9));
        }
    }
    SUBCASE("zero Lipschitz collapses to the nearest-point error") {
        Rng rng(4);
        const PointSet d = random_points(10, 2, rng);
        const std::vector<double> q{0.3, -0.4};
        CHECK(error_bound(q, d, 0.2, default_positivity_offset(0.2, 10), 0.0, 0.37) ==
              doctest::Approx(0.37));
    }
}

namespace {

struct Testbed1d {
    PointSet data;
    Mlp fit;
    std::vector<double> xs;  // data point locations
    double true_f(double z) const { return z * z * z - 2.0 * z; }
    double model_f(double z) const {
        Tensor in(1, 1);
        in.values[0] = z;
        return fit.forward(in).values[0];
    }
    double err(double z) const { return std::abs(true_f(z) - model_f(z)); }
};

// cubic ground truth fit by a small network on 20 points
Testbed1d make_testbed(std::uint64_t seed) {
    Testbed1d tb;
    Rng rng(seed);
    tb.xs.resize(20);
    for (double& x : tb.xs) x = rng.uniform(-2.0, 2.0);
    std::sort(tb.xs.begin(), tb.xs.end());
    Tensor rows(20, 1);
    for (std::size_t i = 0; i < 20; ++i) rows.values[i] = tb.xs[i];
    tb.data = PointSet::from_rows(std::move(rows));

    tb.fit = mlp_init({1, 16, 16, 1}, Activation::Tanh, seed + 1);
    AdamState adam = AdamState::make(tb.fit.params.size(), 5e-3);
    Tensor in(20, 1);
    Tensor target(20, 1);
    for (std::size_t i = 0; i < 20; ++i) {
        in.values[i] = tb.xs[i];
        target.values[i] = tb.true_f(tb.xs[i]);
    }
    for (int step = 0; step < 4000; ++step) {
        Tape tape;
        const auto p = tb.fit.register_params(tape);
        const auto out = tb.fit.forward_on_tape(tape, tape.constant(in), p);
        const auto loss = tape.mean(tape.square(tape.sub(out, tape.constant(target))));
        tape.backward(loss);
        adam_step(tb.fit.params, tb.fit.collect_grads(tape, p), adam);
    }
    return tb;
}

}  // namespace

TEST_CASE("lipschitz bound dominates the true model error on the 1-D testbed") {
    const Testbed1d tb = make_testbed(2027);
    const double lo = tb.xs.front();
    const double hi = tb.xs.back();

    // dense grid over the data hull, data points included
    std::vector<std::vector<double>> pts;
    std::vector<double> errs;
    const int grid_n = 1500;
    for (int i = 0; i <= grid_n; ++i) {
        const double z = lo + (hi - lo) * i / grid_n;
        pts.push_back({z});
        errs.push_back(tb.err(z));
    }
    for (double x : tb.xs) {
        pts.push_back({x});
        errs.push_back(tb.err(x));
    }
    LipschitzOptions opts;
    opts.inflation = 1.1;
    const double lip = lipschitz_estimate(pts, errs, opts);
    CHECK(lip > 0.0);

    const double sigma = 0.1;
    const double c = default_positivity_offset(sigma, tb.data.count());
    std::size_t violations = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto [ci, half_sq] = nearest_point(pts[i], tb.data);
        (void)half_sq;
        const double e_near = tb.err(tb.xs[ci]);
        const double bound = error_bound(pts[i], tb.data, sigma, c, lip, e_near);
        if (bound + 1e-12 < errs[i]) ++violations;
    }
    CHECK(violations == 0);
}

TEST_CASE("annealed descent lands on the closer basin") {
    const PointSet d = points_1d({-1.0, 1.0});
    const auto schedule = make_schedule(0.5, 0.01, 10, ScheduleKind::Geometric);
    const std::vector<double> z0{0.4};
    const auto res = annealed_descent(z0, d, schedule, 50, 1.0);
    CHECK(std::abs(res.z[0] - 1.0) < 1e-3);
    CHECK(res.nearest_index == 1);
}

TEST_CASE("exact symmetric midpoint is a stationary point") {
    const PointSet d = points_1d({-1.0, 1.0});
    const auto schedule = make_schedule(0.5, 0.01, 10, ScheduleKind::Geometric);
    const std::vector<double> z0{0.0};
    const auto res = annealed_descent(z0, d, schedule, 50, 1.0);
    CHECK(res.z[0] == 0.0);  // the measure-zero case stays put
}

TEST_CASE("annealed descent terminates on data for nearly all random inits") {
    Rng rng(404);
    std::size_t landed = 0;
    std::size_t total = 0;
    const auto schedule = make_schedule(1.0, 0.01, 20, ScheduleKind::Geometric);
    for (int ds = 0; ds < 20; ++ds) {
        const PointSet d = random_points(20, 2, rng);
        for (int init = 0; init < 100; ++init) {
            std::vector<double> z0{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
            const auto res = annealed_descent(z0, d, schedule, 40, 1.0);
            ++total;
            if (res.nearest_distance <= 1e-3 * schedule.sigma_min()) ++landed;
        }
    }
    CHECK(total == 2000);
    CHECK(static_cast<double>(landed) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("distance regressor approximates the exact softmin") {
    const PointSet d = points_1d({-0.5, 0.5});
    const auto schedule = make_schedule(0.5, 0.1, 5, ScheduleKind::Geometric);
    DistanceTrainConfig cfg;
    cfg.hidden = {64, 64};
    cfg.steps = 8000;
    cfg.batch = 128;
    cfg.lr = 3e-3;
    cfg.seed = 5;
    cfg.domain = Box{{-1.5}, {1.5}};
    const auto log_path = std::filesystem::temp_directory_path() / "sgp_dist_train.csv";
    cfg.log_path = log_path.string();
    const DistanceRegressor reg = train_distance_regressor(d, schedule, cfg);

    // evaluates at both schedule endpoints
    CHECK(std::isfinite(reg.eval(std::vector<double>{0.3}, schedule.sigma_max())));
    CHECK(std::isfinite(reg.eval(std::vector<double>{0.3}, schedule.sigma_min())));

    double max_exact = 0.0;
    for (int i = 0; i <= 60; ++i) {
        const double z = -1.5 + 3.0 * i / 60.0;
        max_exact = std::max(max_exact, softmin_distance_sq(std::vector<double>{z}, d, 0.3,
                                                            default_positivity_offset(0.3, 2)));
    }
    for (double sigma : {0.15, 0.3, 0.45}) {
        for (int i = 0; i <= 60; ++i) {
            const double z = -1.5 + 3.0 * i / 60.0;
            const double exact = softmin_distance_sq(std::vector<double>{z}, d, sigma,
                                                     default_positivity_offset(sigma, 2));
            const double pred = reg.eval(std::vector<double>{z}, sigma);
            CHECK(std::abs(pred - exact) / std::max(std::abs(exact), 0.1 * max_exact) < 0.10);
        }
    }

    // per-step timing and dataset size are recorded in the training log
    std::ifstream log(log_path);
    std::string header;
    std::getline(log, header);
    CHECK(header == "step,loss,step_ms,n_points");
    std::string line;
    std::getline(log, line);
    CHECK(!line.empty());
    std::filesystem::remove(log_path);
}

TEST_CASE("bounded function error does not bound gradient error") {
    // g = f + alpha cos(omega x): function error stays alpha while the
    // derivative error scales with alpha * omega
    const double alpha = 1e-2;
    const double omega = 1e3;
    const auto f = [](double x) { return 0.3 * x * x - 1.2 * x; };
    const auto g = [&](double x) { return f(x) + alpha * std::cos(omega * x); };

    double max_fn_err = 0.0;
    double max_grad_err = 0.0;
    const double h = 1e-7;
    for (int i = 0; i <= 10000; ++i) {
        const double x = static_cast<double>(i) / 10000.0;
        max_fn_err = std::max(max_fn_err, std::abs(g(x) - f(x)));
        const double gd = (g(x + h) - g(x - h)) / (2.0 * h);
        const double fdv = (f(x + h) - f(x - h)) / (2.0 * h);
        max_grad_err = std::max(max_grad_err, std::abs(gd - fdv));
    }
    CHECK(max_fn_err <= alpha + 1e-12);
    CHECK(max_grad_err >= 0.9 * alpha * omega);
}

TEST_CASE("oracles reject empty sets and bad sigma") {
    const PointSet d = points_1d({0.0});
    const std::vector<double> z{1.0};
    CHECK_THROWS_AS(softmin_distance_sq(z, d, 0.0, 0.0), config_error);
    CHECK_THROWS_AS(softmin_distance_sq(z, d, -1.0, 0.0), config_error);
    PointSet empty;
    empty.dim = 1;
    empty.points = Tensor(0, 1);
    CHECK_THROWS_AS(softmin_distance_sq(z, empty, 0.1, 0.0), config_error);
    CHECK_THROWS_AS(perturbed_log_likelihood(z, empty, 0.1), config_error);
}
