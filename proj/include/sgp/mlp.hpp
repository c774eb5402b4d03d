#pragma once

#include <span>
#include <vector>

#include "sgp/common.hpp"
#include "sgp/rng.hpp"
#include "sgp/tape.hpp"

namespace sgp {

// Fully-connected network with one flat parameter vector. Layer l maps
// widths[l] -> widths[l+1]; hidden layers apply the activation, the last
// layer is affine. Parameter order (also the checkpoint blob order):
// W0 row-major, b0, W1, b1, ...
struct Mlp {
    std::vector<std::size_t> widths;
    Activation act = Activation::Tanh;
    std::vector<double> params;

    std::size_t layer_count() const { return widths.size() - 1; }
    std::size_t input_dim() const { return widths.front(); }
    std::size_t output_dim() const { return widths.back(); }

    std::span<double> weight(std::size_t l);
    std::span<const double> weight(std::size_t l) const;
    std::span<double> bias(std::size_t l);
    std::span<const double> bias(std::size_t l) const;

    // Tape ids of every parameter leaf, in parameter order.
    struct TapeParams {
        std::vector<Tape::Id> weights;
        std::vector<Tape::Id> biases;
    };

    TapeParams register_params(Tape& tape) const;
    Tape::Id forward_on_tape(Tape& tape, Tape::Id input, const TapeParams& p) const;
    // Registers parameters internally; use when gradients wrt parameters are not needed.
    Tape::Id forward_on_tape(Tape& tape, Tape::Id input) const;

    // Plain forward pass, input (B x in) -> (B x out).
    Tensor forward(const Tensor& input) const;

    // Reads d(loss)/d(param) from a tape after backward into a flat vector
    // aligned with params.
    std::vector<double> collect_grads(const Tape& tape, const TapeParams& p) const;
};

Mlp mlp_init(const std::vector<std::size_t>& widths, Activation act, std::uint64_t seed);

std::size_t mlp_param_count(const std::vector<std::size_t>& widths);

// Adam with bias correction over a flat parameter vector.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState make(std::size_t n, double lr);
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace sgp
