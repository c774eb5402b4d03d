#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgp/common.hpp"
#include "sgp/rng.hpp"
#include "sgp/tape.hpp"

namespace sgp {

struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    std::size_t dim() const { return lo.size(); }
    bool contains(std::span<const double> x, double tol = 0.0) const;
    std::vector<double> clamp(std::span<const double> x) const;
    std::vector<double> sample(Rng& rng) const;
};

// Ground-truth system: true dynamics, costs, data-collection sampling and an
// initial state. Costs follow the convention
//   episode cost = sum_{t=1..T} pair_cost(t, T, x_t, u_t) + end_cost(x_{T+1})
// with x_1 the initial state and x_{t+1} = step(x_t, u_t).
class Env {
  public:
    virtual ~Env() = default;

    virtual std::string name() const = 0;
    virtual std::size_t state_dim() const = 0;
    virtual std::size_t action_dim() const = 0;
    virtual Box action_box() const = 0;
    virtual Box state_box() const = 0;
    virtual std::size_t episode_length() const = 0;

    virtual std::vector<double> step(std::span<const double> x, std::span<const double> u) const = 0;
    virtual double pair_cost(std::size_t t, std::size_t horizon, std::span<const double> x,
                             std::span<const double> u) const = 0;
    virtual double end_cost(std::span<const double> x) const = 0;

    virtual std::vector<double> initial_state() const = 0;

    // Data-collection sampling. The default draws uniformly from `region`
    // (or the state box); observation-space systems override.
    virtual std::vector<double> sample_state(Rng& rng, const Box* region) const;
    virtual std::vector<double> sample_action(Rng& rng) const;

    // Rewards (negative costs) as tape expressions for gradient planners.
    virtual Tape::Id reward_pair_on_tape(Tape& tape, std::size_t t, std::size_t horizon, Tape::Id x,
                                         Tape::Id u) const = 0;
    virtual Tape::Id reward_end_on_tape(Tape& tape, Tape::Id x) const = 0;
};

// --- Cart-pole swing-up -----------------------------------------------------

enum class Integrator { Euler, Rk4 };

struct CartPoleParams {
    double cart_mass = 1.0;
    double pole_mass = 1.0;
    double pole_length = 1.0;
    double gravity = 9.81;
    double dt = 0.05;
    Integrator integrator = Integrator::Rk4;
};

// State (x, theta, xdot, thetadot); theta = 0 hanging down, theta = pi upright.
std::vector<double> cartpole_step(const CartPoleParams& p, std::span<const double> state, double force);
std::vector<double> cartpole_accel(const CartPoleParams& p, std::span<const double> state, double force);
double cartpole_energy(const CartPoleParams& p, std::span<const double> state);
// Terminal-only quadratic cost on the rollout's final state.
double cartpole_cost(const std::vector<std::vector<double>>& traj, std::span<const double> q_diag,
                     std::span<const double> goal);

class CartPoleEnv : public Env {
  public:
    CartPoleParams params;
    std::vector<double> q_diag{1.0, 1.0, 0.1, 0.1};
    std::vector<double> goal{0.0, kPi, 0.0, 0.0};
    std::vector<double> start{0.0, 0.0, 0.0, 0.0};
    double force_limit = 10.0;
    Box data_box{{-3.0, -kPi, -8.0, -8.0}, {3.0, kPi, 8.0, 8.0}};
    std::size_t horizon = 60;

    std::string name() const override { return "cartpole"; }
    std::size_t state_dim() const override { return 4; }
    std::size_t action_dim() const override { return 1; }
    Box action_box() const override { return Box{{-force_limit}, {force_limit}}; }
    Box state_box() const override { return data_box; }
    std::size_t episode_length() const override { return horizon; }
    std::vector<double> step(std::span<const double> x, std::span<const double> u) const override;
    double pair_cost(std::size_t, std::size_t, std::span<const double>,
                     std::span<const double>) const override {
        return 0.0;
    }
    double end_cost(std::span<const double> x) const override;
    std::vector<double> initial_state() const override { return start; }
    Tape::Id reward_pair_on_tape(Tape& tape, std::size_t, std::size_t, Tape::Id,
                                 Tape::Id) const override {
        return tape.constant(Tensor::scalar(0.0));
    }
    Tape::Id reward_end_on_tape(Tape& tape, Tape::Id x) const override;
};

// --- Single integrator with an actuation-loss hole --------------------------

struct PitParams {
    Box domain{{0.0, 0.0}, {1.0, 1.0}};
    std::vector<double> hole_center{0.5, 0.5};
    double hole_radius = 0.25;
    std::vector<double> goal{0.9, 0.5};
    std::vector<double> start{0.1, 0.5};
};

// x' = x + u outside the hole, x' = x inside (boundary counts as outside).
std::vector<double> pit_step(const PitParams& p, std::span<const double> x, std::span<const double> u);
bool pit_inside_hole(const PitParams& p, std::span<const double> x);

class PitEnv : public Env {
  public:
    PitParams params;
    double action_limit = 0.1;
    double q_run = 0.01;
    double r_run = 0.001;
    double q_end = 0.2;
    std::size_t horizon = 28;
    bool exclude_hole_from_sampling = true;

    PitEnv();
    explicit PitEnv(PitParams p);

    std::string name() const override { return "pit"; }
    std::size_t state_dim() const override { return 2; }
    std::size_t action_dim() const override { return 2; }
    Box action_box() const override {
        return Box{{-action_limit, -action_limit}, {action_limit, action_limit}};
    }
    Box state_box() const override { return params.domain; }
    std::size_t episode_length() const override { return horizon; }
    std::vector<double> step(std::span<const double> x, std::span<const double> u) const override;
    double pair_cost(std::size_t t, std::size_t horizon, std::span<const double> x,
                     std::span<const double> u) const override;
    double end_cost(std::span<const double> x) const override;
    std::vector<double> initial_state() const override { return params.start; }
    std::vector<double> sample_state(Rng& rng, const Box* region) const override;
    Tape::Id reward_pair_on_tape(Tape& tape, std::size_t t, std::size_t horizon, Tape::Id x,
                                 Tape::Id u) const override;
    Tape::Id reward_end_on_tape(Tape& tape, Tape::Id x) const override;
};

// --- Pixel-space single integrator -------------------------------------------

struct PixelParams {
    std::size_t grid = 16;
    Box state_range{{-1.0, -1.0}, {1.0, 1.0}};
    Box control_range{{-0.2, -0.2}, {0.2, 0.2}};
    double blob_std = 1.0;  // pixels
    std::size_t horizon = 15;
    double q_run = 500.0;
    double r_run = 6.5;
    double q_end = 1000.0;
    std::vector<double> goal{0.5, 0.0};
    std::vector<double> start{-0.5, 0.0};
};

// Unit-sum Gaussian blob image of a 2-D point mapped through `range`.
std::vector<double> pixel_render(const PixelParams& p, const Box& range, std::span<const double> point);
// Intensity-weighted average of the grid function over `range`; the image is
// normalized to unit sum first. All-zero images are a domain error.
std::vector<double> pixel_extract(const PixelParams& p, const Box& range, std::span<const double> image);
std::vector<double> pixel_extract_state(const PixelParams& p, std::span<const double> image);
std::vector<double> pixel_extract_control(const PixelParams& p, std::span<const double> image);
std::vector<double> pixel_step(const PixelParams& p, std::span<const double> obs,
                               std::span<const double> control_image);
// Grid coordinate values (cell centers) along the given axis.
std::vector<double> pixel_grid_values(const PixelParams& p, const Box& range, std::size_t axis);
double pixel_cost(const PixelParams& p, const std::vector<std::vector<double>>& decoded_states,
                  const std::vector<std::vector<double>>& decoded_controls);

class PixelEnv : public Env {
  public:
    PixelParams params;

    std::string name() const override { return "pixel"; }
    std::size_t state_dim() const override { return params.grid * params.grid; }
    std::size_t action_dim() const override { return params.grid * params.grid; }
    Box action_box() const override;
    Box state_box() const override;
    std::size_t episode_length() const override { return params.horizon; }
    std::vector<double> step(std::span<const double> x, std::span<const double> u) const override;
    double pair_cost(std::size_t t, std::size_t horizon, std::span<const double> x,
                     std::span<const double> u) const override;
    double end_cost(std::span<const double> x) const override;
    std::vector<double> initial_state() const override;
    std::vector<double> sample_state(Rng& rng, const Box* region) const override;
    std::vector<double> sample_action(Rng& rng) const override;
    Tape::Id reward_pair_on_tape(Tape& tape, std::size_t t, std::size_t horizon, Tape::Id x,
                                 Tape::Id u) const override;
    Tape::Id reward_end_on_tape(Tape& tape, Tape::Id x) const override;
};

std::unique_ptr<Env> make_env(const std::string& name);

}  // namespace sgp
