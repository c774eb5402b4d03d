#include "sgp/environments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>

namespace sgp {

bool Box::contains(std::span<const double> x, double tol) const {
    for (std::size_t i = 0; i < dim(); ++i) {
        if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) {
            return false;
        }
    }
    return true;
}

std::vector<double> Box::clamp(std::span<const double> x) const {
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t i = 0; i < dim(); ++i) {
        out[i] = std::clamp(out[i], lo[i], hi[i]);
    }
    return out;
}

std::vector<double> Box::sample(Rng& rng) const {
    std::vector<double> out(dim());
    for (std::size_t i = 0; i < dim(); ++i) {
        out[i] = rng.uniform(lo[i], hi[i]);
    }
    return out;
}

std::vector<double> Env::sample_state(Rng& rng, const Box* region) const {
    const Box box = region != nullptr ? *region : state_box();
    return box.sample(rng);
}

std::vector<double> Env::sample_action(Rng& rng) const { return action_box().sample(rng); }

// --- cart-pole ---------------------------------------------------------------

std::vector<double> cartpole_accel(const CartPoleParams& p, std::span<const double> s, double f) {
    const double theta = s[1];
    const double thetadot = s[3];
    const double st = std::sin(theta);
    const double ct = std::cos(theta);
    const double mc = p.cart_mass;
    const double mp = p.pole_mass;
    const double l = p.pole_length;
    const double g = p.gravity;
    const double denom = mc + mp * st * st;
    const double xdd = (f + mp * st * (l * thetadot * thetadot + g * ct)) / denom;
    const double tdd = (-f * ct - mp * l * thetadot * thetadot * ct * st - (mc + mp) * g * st) / (l * denom);
    return {xdd, tdd};
}

namespace {

std::array<double, 4> cartpole_deriv(const CartPoleParams& p, const std::array<double, 4>& s, double f) {
    const auto acc = cartpole_accel(p, std::span<const double>(s.data(), 4), f);
    return {s[2], s[3], acc[0], acc[1]};
}

}  // namespace

std::vector<double> cartpole_step(const CartPoleParams& p, std::span<const double> state, double force) {
    std::array<double, 4> s{state[0], state[1], state[2], state[3]};
    const double dt = p.dt;
    if (p.integrator == Integrator::Euler) {
        const auto d = cartpole_deriv(p, s, force);
        for (int i = 0; i < 4; ++i) s[i] += dt * d[i];
    } else {
        const auto k1 = cartpole_deriv(p, s, force);
        std::array<double, 4> s2;
        for (int i = 0; i < 4; ++i) s2[i] = s[i] + 0.5 * dt * k1[i];
        const auto k2 = cartpole_deriv(p, s2, force);
        std::array<double, 4> s3;
        for (int i = 0; i < 4; ++i) s3[i] = s[i] + 0.5 * dt * k2[i];
        const auto k3 = cartpole_deriv(p, s3, force);
        std::array<double, 4> s4;
        for (int i = 0; i < 4; ++i) s4[i] = s[i] + dt * k3[i];
        const auto k4 = cartpole_deriv(p, s4, force);
        for (int i = 0; i < 4; ++i) s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    return {s[0], s[1], s[2], s[3]};
}

double cartpole_energy(const CartPoleParams& p, std::span<const double> s) {
    const double theta = s[1];
    const double xd = s[2];
    const double td = s[3];
    const double mc = p.cart_mass;
    const double mp = p.pole_mass;
    const double l = p.pole_length;
    const double kinetic = 0.5 * (mc + mp) * xd * xd + mp * l * xd * td * std::cos(theta) +
                           0.5 * mp * l * l * td * td;
    const double potential = -mp * p.gravity * l * std::cos(theta);
    return kinetic + potential;
}

double cartpole_cost(const std::vector<std::vector<double>>& traj, std::span<const double> q_diag,
                     std::span<const double> goal) {
    if (traj.empty()) {
        throw config_error("cartpole_cost: empty trajectory");
    }
    const auto& xT = traj.back();
    double c = 0.0;
    for (std::size_t i = 0; i < q_diag.size(); ++i) {
        const double d = xT[i] - goal[i];
        c += q_diag[i] * d * d;
    }
    return c;
}

std::vector<double> CartPoleEnv::step(std::span<const double> x, std::span<const double> u) const {
    return cartpole_step(params, x, std::clamp(u[0], -force_limit, force_limit));
}

double CartPoleEnv::end_cost(std::span<const double> x) const {
    double c = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        const double d = x[i] - goal[i];
        c += q_diag[i] * d * d;
    }
    return c;
}

Tape::Id CartPoleEnv::reward_end_on_tape(Tape& tape, Tape::Id x) const {
    Tape::Id diff = tape.sub(x, tape.constant(Tensor::row(goal)));
    Tape::Id sq = tape.square(diff);
    return tape.scale(tape.dot_const(sq, Tensor::row(q_diag)), -1.0);
}

// --- pit integrator ----------------------------------------------------------

bool pit_inside_hole(const PitParams& p, std::span<const double> x) {
    const double dx = x[0] - p.hole_center[0];
    const double dy = x[1] - p.hole_center[1];
    return dx * dx + dy * dy < p.hole_radius * p.hole_radius;
}

std::vector<double> pit_step(const PitParams& p, std::span<const double> x, std::span<const double> u) {
    if (pit_inside_hole(p, x)) {
        return {x[0], x[1]};
    }
    return {x[0] + u[0], x[1] + u[1]};
}

PitEnv::PitEnv() = default;
PitEnv::PitEnv(PitParams p) : params(std::move(p)) {}

std::vector<double> PitEnv::step(std::span<const double> x, std::span<const double> u) const {
    std::vector<double> uc = action_box().clamp(u);
    return pit_step(params, x, uc);
}

double PitEnv::pair_cost(std::size_t, std::size_t, std::span<const double> x,
                         std::span<const double> u) const {
    double c = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        const double d = x[i] - params.goal[i];
        c += q_run * d * d;
        c += r_run * u[i] * u[i];
    }
    return c;
}

double PitEnv::end_cost(std::span<const double> x) const {
    double c = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        const double d = x[i] - params.goal[i];
        c += q_end * d * d;
    }
    return c;
}

std::vector<double> PitEnv::sample_state(Rng& rng, const Box* region) const {
    const Box box = region != nullptr ? *region : params.domain;
    for (int tries = 0; tries < 10000; ++tries) {
        std::vector<double> x = box.sample(rng);
        if (!exclude_hole_from_sampling || !pit_inside_hole(params, x)) {
            return x;
        }
    }
    throw config_error("PitEnv::sample_state: sampling region lies inside the hole");
}

Tape::Id PitEnv::reward_pair_on_tape(Tape& tape, std::size_t, std::size_t, Tape::Id x, Tape::Id u) const {
    Tape::Id diff = tape.sub(x, tape.constant(Tensor::row(params.goal)));
    Tape::Id state_term = tape.dot_const(tape.square(diff), Tensor::full(1, 2, q_run));
    Tape::Id act_term = tape.dot_const(tape.square(u), Tensor::full(1, 2, r_run));
    return tape.scale(tape.add(state_term, act_term), -1.0);
}

Tape::Id PitEnv::reward_end_on_tape(Tape& tape, Tape::Id x) const {
    Tape::Id diff = tape.sub(x, tape.constant(Tensor::row(params.goal)));
    return tape.scale(tape.dot_const(tape.square(diff), Tensor::full(1, 2, q_end)), -1.0);
}

// --- pixel integrator --------------------------------------------------------

std::vector<double> pixel_grid_values(const PixelParams& p, const Box& range, std::size_t axis) {
    std::vector<double> v(p.grid);
    const double lo = range.lo[axis];
    const double hi = range.hi[axis];
    for (std::size_t i = 0; i < p.grid; ++i) {
        v[i] = lo + (static_cast<double>(i) + 0.5) * (hi - lo) / static_cast<double>(p.grid);
    }
    return v;
}

std::vector<double> pixel_render(const PixelParams& p, const Box& range, std::span<const double> point) {
    const std::size_t g = p.grid;
    std::vector<double> pt(point.begin(), point.end());
    if (!range.contains(pt)) {
        std::cerr << "[pixel_render] point outside range, clamping\n";
        pt = range.clamp(pt);
    }
    // fractional pixel coordinates of the point; cell centers sit at integers
    double fc[2];
    for (std::size_t a = 0; a < 2; ++a) {
        fc[a] = (pt[a] - range.lo[a]) / (range.hi[a] - range.lo[a]) * static_cast<double>(g) - 0.5;
    }
    std::vector<double> img(g * g);
    const double inv2s2 = 1.0 / (2.0 * p.blob_std * p.blob_std);
    double total = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
        const double di = static_cast<double>(i) - fc[0];
        for (std::size_t j = 0; j < g; ++j) {
            const double dj = static_cast<double>(j) - fc[1];
            const double v = std::exp(-(di * di + dj * dj) * inv2s2);
            img[i * g + j] = v;
            total += v;
        }
    }
    for (double& v : img) v /= total;
    return img;
}

std::vector<double> pixel_extract(const PixelParams& p, const Box& range, std::span<const double> image) {
    const std::size_t g = p.grid;
    if (image.size() != g * g) {
        throw shape_error("pixel_extract: image size mismatch");
    }
    double total = 0.0;
    for (double v : image) total += v;
    if (total <= 0.0 || !std::isfinite(total)) {
        throw numeric_error("pixel_extract: image has non-positive total intensity");
    }
    const auto v0 = pixel_grid_values(p, range, 0);
    const auto v1 = pixel_grid_values(p, range, 1);
    double acc0 = 0.0;
    double acc1 = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t j = 0; j < g; ++j) {
            const double w = image[i * g + j];
            acc0 += w * v0[i];
            acc1 += w * v1[j];
        }
    }
    return {acc0 / total, acc1 / total};
}

std::vector<double> pixel_extract_state(const PixelParams& p, std::span<const double> image) {
    return pixel_extract(p, p.state_range, image);
}

std::vector<double> pixel_extract_control(const PixelParams& p, std::span<const double> image) {
    return pixel_extract(p, p.control_range, image);
}

std::vector<double> pixel_step(const PixelParams& p, std::span<const double> obs,
                               std::span<const double> control_image) {
    const auto x = pixel_extract_state(p, obs);
    const auto u = pixel_extract_control(p, control_image);
    std::vector<double> next{x[0] + u[0], x[1] + u[1]};
    next = p.state_range.clamp(next);
    return pixel_render(p, p.state_range, next);
}

double pixel_cost(const PixelParams& p, const std::vector<std::vector<double>>& xs,
                  const std::vector<std::vector<double>>& us) {
    if (xs.size() != us.size() || xs.empty()) {
        throw config_error("pixel_cost: need equal-length decoded state/control lists");
    }
    const std::size_t horizon = xs.size();
    double c = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
        const double q = (t + 1 == horizon) ? p.q_end : p.q_run;
        for (std::size_t i = 0; i < 2; ++i) {
            const double d = xs[t][i] - p.goal[i];
            c += q * d * d;
            c += p.r_run * us[t][i] * us[t][i];
        }
    }
    return c;
}

Box PixelEnv::action_box() const {
    const std::size_t k = params.grid * params.grid;
    return Box{std::vector<double>(k, 0.0), std::vector<double>(k, 1.0)};
}

Box PixelEnv::state_box() const {
    const std::size_t k = params.grid * params.grid;
    return Box{std::vector<double>(k, 0.0), std::vector<double>(k, 1.0)};
}

std::vector<double> PixelEnv::step(std::span<const double> x, std::span<const double> u) const {
    return pixel_step(params, x, u);
}

namespace {

std::vector<double> flattened_axis_weights(const PixelParams& p, const Box& range, std::size_t axis) {
    const std::size_t g = p.grid;
    const auto v = pixel_grid_values(p, range, axis);
    std::vector<double> w(g * g);
    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t j = 0; j < g; ++j) {
            w[i * g + j] = axis == 0 ? v[i] : v[j];
        }
    }
    return w;
}

// Decoded point of an image node: (dot(img, w0), dot(img, w1)) / sum(img).
Tape::Id decode_on_tape(Tape& tape, const PixelParams& p, const Box& range, Tape::Id img) {
    Tape::Id total = tape.sum(img);
    Tape::Id d0 = tape.dot_const(img, Tensor::row(flattened_axis_weights(p, range, 0)));
    Tape::Id d1 = tape.dot_const(img, Tensor::row(flattened_axis_weights(p, range, 1)));
    return tape.div_by_scalar(tape.stack_scalars({d0, d1}), total);
}

}  // namespace

double PixelEnv::pair_cost(std::size_t t, std::size_t horizon_len, std::span<const double> x,
                           std::span<const double> u) const {
    const auto xs = pixel_extract_state(params, x);
    const auto uc = pixel_extract_control(params, u);
    const double q = (t == horizon_len) ? params.q_end : params.q_run;
    double c = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        const double d = xs[i] - params.goal[i];
        c += q * d * d;
        c += params.r_run * uc[i] * uc[i];
    }
    return c;
}

double PixelEnv::end_cost(std::span<const double>) const { return 0.0; }

std::vector<double> PixelEnv::initial_state() const {
    return pixel_render(params, params.state_range, params.start);
}

std::vector<double> PixelEnv::sample_state(Rng& rng, const Box* region) const {
    Box r = params.state_range;
    if (region != nullptr && region->dim() == 2) {
        r = *region;
    }
    const auto x = r.sample(rng);
    return pixel_render(params, params.state_range, x);
}

std::vector<double> PixelEnv::sample_action(Rng& rng) const {
    const auto u = params.control_range.sample(rng);
    return pixel_render(params, params.control_range, u);
}

Tape::Id PixelEnv::reward_pair_on_tape(Tape& tape, std::size_t t, std::size_t horizon_len, Tape::Id x,
                                       Tape::Id u) const {
    const double q = (t == horizon_len) ? params.q_end : params.q_run;
    Tape::Id xs = decode_on_tape(tape, params, params.state_range, x);
    Tape::Id uc = decode_on_tape(tape, params, params.control_range, u);
    Tape::Id xd = tape.sub(xs, tape.constant(Tensor::row(params.goal)));
    Tape::Id state_term = tape.dot_const(tape.square(xd), Tensor::full(1, 2, q));
    Tape::Id act_term = tape.dot_const(tape.square(uc), Tensor::full(1, 2, params.r_run));
    return tape.scale(tape.add(state_term, act_term), -1.0);
}

Tape::Id PixelEnv::reward_end_on_tape(Tape& tape, Tape::Id) const {
    return tape.constant(Tensor::scalar(0.0));
}

std::unique_ptr<Env> make_env(const std::string& name) {
    if (name == "cartpole") return std::make_unique<CartPoleEnv>();
    if (name == "pit") return std::make_unique<PitEnv>();
    if (name == "pixel") return std::make_unique<PixelEnv>();
    throw config_error("unknown environment: " + name);
}

}  // namespace sgp
