#include "sgp/mlp.hpp"

#include <cmath>

namespace sgp {

namespace {

std::size_t layer_offset(const std::vector<std::size_t>& widths, std::size_t l) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i) {
        off += widths[i] * widths[i + 1] + widths[i + 1];
    }
    return off;
}

Tape::Id forward_layers(const Mlp& net, Tape& tape, Tape::Id input, const Mlp::TapeParams& p) {
    Tape::Id h = input;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        h = tape.linear(h, p.weights[l], p.biases[l]);
        if (l + 1 < net.layer_count()) {
            h = tape.activation(h, net.act);
        }
    }
    return h;
}

}  // namespace

std::size_t mlp_param_count(const std::vector<std::size_t>& widths) {
    return layer_offset(widths, widths.size() - 1);
}

std::span<double> Mlp::weight(std::size_t l) {
    return {params.data() + layer_offset(widths, l), widths[l] * widths[l + 1]};
}

std::span<const double> Mlp::weight(std::size_t l) const {
    return {params.data() + layer_offset(widths, l), widths[l] * widths[l + 1]};
}

std::span<double> Mlp::bias(std::size_t l) {
    return {params.data() + layer_offset(widths, l) + widths[l] * widths[l + 1], widths[l + 1]};
}

std::span<const double> Mlp::bias(std::size_t l) const {
    return {params.data() + layer_offset(widths, l) + widths[l] * widths[l + 1], widths[l + 1]};
}

Mlp mlp_init(const std::vector<std::size_t>& widths, Activation act, std::uint64_t seed) {
    if (widths.size() < 2) {
        throw config_error("mlp_init: need at least an input and an output width");
    }
    for (std::size_t w : widths) {
        if (w < 1) {
            throw config_error("mlp_init: all widths must be >= 1");
        }
    }
    Mlp net;
    net.widths = widths;
    net.act = act;
    net.params.assign(mlp_param_count(widths), 0.0);
    Rng rng(seed, /*stream=*/0x4d4c50);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const double fan_in = static_cast<double>(widths[l]);
        const double fan_out = static_cast<double>(widths[l + 1]);
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        auto w = net.weight(l);
        for (double& v : w) {
            v = rng.uniform(-bound, bound);
        }
        // biases stay zero
    }
    return net;
}

Mlp::TapeParams Mlp::register_params(Tape& tape) const {
    TapeParams p;
    for (std::size_t l = 0; l < layer_count(); ++l) {
        Tensor w(widths[l + 1], widths[l]);
        auto ws = weight(l);
        std::copy(ws.begin(), ws.end(), w.values.begin());
        p.weights.push_back(tape.leaf(std::move(w)));
        Tensor b(1, widths[l + 1]);
        auto bs = bias(l);
        std::copy(bs.begin(), bs.end(), b.values.begin());
        p.biases.push_back(tape.leaf(std::move(b)));
    }
    return p;
}

Tape::Id Mlp::forward_on_tape(Tape& tape, Tape::Id input, const TapeParams& p) const {
    if (tape.value(input).cols() != input_dim()) {
        throw shape_error("Mlp::forward_on_tape: input dim " + std::to_string(tape.value(input).cols()) +
                          " != " + std::to_string(input_dim()));
    }
    return forward_layers(*this, tape, input, p);
}

Tape::Id Mlp::forward_on_tape(Tape& tape, Tape::Id input) const {
    return forward_on_tape(tape, input, register_params(tape));
}

Tensor Mlp::forward(const Tensor& input) const {
    if (input.cols() != input_dim()) {
        throw shape_error("Mlp::forward: input dim " + std::to_string(input.cols()) + " != " +
                          std::to_string(input_dim()));
    }
    const std::size_t batch = input.rows();
    Tensor cur = input;
    for (std::size_t l = 0; l < layer_count(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out_dim = widths[l + 1];
        Tensor next(batch, out_dim);
        auto ws = weight(l);
        auto bs = bias(l);
#pragma omp parallel for schedule(static) if (batch * out_dim * in > 1u << 16)
        for (std::size_t r = 0; r < batch; ++r) {
            const double* xrow = &cur.values[r * in];
            double* yrow = &next.values[r * out_dim];
            for (std::size_t o = 0; o < out_dim; ++o) {
                const double* wrow = ws.data() + o * in;
                double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                for (std::size_t i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
                yrow[o] = bs[o] + acc;
            }
        }
        if (l + 1 < layer_count()) {
            switch (act) {
                case Activation::Tanh:
                    for (double& v : next.values) v = std::tanh(v);
                    break;
                case Activation::Relu:
                    for (double& v : next.values) v = v > 0.0 ? v : 0.0;
                    break;
                case Activation::Softplus:
                    for (double& v : next.values)
                        v = v > 30.0 ? v : std::log1p(std::exp(std::min(v, 30.0)));
                    break;
            }
        }
        cur = std::move(next);
    }
    return cur;
}

std::vector<double> Mlp::collect_grads(const Tape& tape, const TapeParams& p) const {
    std::vector<double> g;
    g.reserve(params.size());
    for (std::size_t l = 0; l < layer_count(); ++l) {
        const Tensor& gw = tape.grad(p.weights[l]);
        g.insert(g.end(), gw.values.begin(), gw.values.end());
        const Tensor& gb = tape.grad(p.biases[l]);
        g.insert(g.end(), gb.values.begin(), gb.values.end());
    }
    return g;
}

AdamState AdamState::make(std::size_t n, double lr_in) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.lr = lr_in;
    return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw shape_error("adam_step: size mismatch");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            throw numeric_error("adam_step: non-finite gradient");
        }
    }
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

}  // namespace sgp
