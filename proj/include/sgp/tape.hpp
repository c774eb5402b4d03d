#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sgp/common.hpp"

namespace sgp {

enum class Activation { Tanh, Relu, Softplus };

Activation activation_from_string(const std::string& s);
std::string activation_to_string(Activation a);

// Reverse-mode tape over Tensors. Nodes are appended in evaluation order, so
// construction order is a topological order and the backward pass is a single
// reverse sweep. Scalar outputs only; a Tape is single-threaded.
class Tape {
  public:
    using Id = std::int32_t;

    Id leaf(Tensor v);
    // A constant participates in the graph but the caller never reads its grad.
    Id constant(Tensor v) { return leaf(std::move(v)); }

    const Tensor& value(Id id) const { return nodes_[id].val; }
    const Tensor& grad(Id id) const { return nodes_[id].grad; }

    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id scale(Id a, double c);
    // y = x W^T + b with x (B x in), W (out x in), b (1 x out) broadcast over rows.
    Id linear(Id x, Id w, Id b);
    // y = a * r with a (B x w) and r (1 x w) broadcast over rows.
    Id mul_row(Id a, Id r);
    Id activation(Id a, Activation kind);
    Id square(Id a);
    Id sum(Id a);
    Id mean(Id a);
    // scalar = sum(a * w), w fixed.
    Id dot_const(Id a, Tensor w);
    // y = a * s + t elementwise with fixed s, t (each 1 x cols, broadcast over rows).
    Id affine_diag(Id a, Tensor s, Tensor t);
    Id concat_cols(Id a, Id b);
    // y = a / s with s a positive scalar node.
    Id div_by_scalar(Id a, Id s);
    // Stack 1x1 scalars into a 1 x k row.
    Id stack_scalars(const std::vector<Id>& ids);

    // Seeds d(out)/d(out) = 1 and sweeps the tape in reverse. out must be 1x1.
    void backward(Id out);

    std::size_t size() const { return nodes_.size(); }

  private:
    using BackFn = std::function<void(Tape&, Id)>;

    struct Node {
        Tensor val;
        Tensor grad;
        BackFn back;
    };

    Id push(Tensor val, BackFn back);
    Tensor& grad_mut(Id id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
};

}  // namespace sgp
