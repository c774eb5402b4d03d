#include "sgp/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace sgp {

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    if (s == "softplus") return Activation::Softplus;
    throw config_error("unknown activation: " + s);
}

std::string activation_to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
        case Activation::Softplus: return "softplus";
    }
    return "tanh";
}

Tape::Id Tape::push(Tensor val, BackFn back) {
    nodes_.push_back(Node{std::move(val), Tensor{}, std::move(back)});
    return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::leaf(Tensor v) { return push(std::move(v), nullptr); }

Tape::Id Tape::add(Id a, Id b) {
    require_same_shape(value(a), value(b), "Tape::add");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += vb.values[i];
    return push(std::move(out), [a, b](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.values[i] += g.values[i];
            gb.values[i] += g.values[i];
        }
    });
}

Tape::Id Tape::sub(Id a, Id b) {
    require_same_shape(value(a), value(b), "Tape::sub");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= vb.values[i];
    return push(std::move(out), [a, b](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.values[i] += g.values[i];
            gb.values[i] -= g.values[i];
        }
    });
}

Tape::Id Tape::mul(Id a, Id b) {
    require_same_shape(value(a), value(b), "Tape::mul");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= vb.values[i];
    return push(std::move(out), [a, b](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        const Tensor& va = t.value(a);
        const Tensor& vb2 = t.value(b);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.values[i] += g.values[i] * vb2.values[i];
            gb.values[i] += g.values[i] * va.values[i];
        }
    });
}

Tape::Id Tape::scale(Id a, double c) {
    Tensor out = value(a);
    for (double& v : out.values) v *= c;
    return push(std::move(out), [a, c](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += c * g.values[i];
    });
}

Tape::Id Tape::linear(Id x, Id w, Id b) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    const Tensor& vb = value(b);
    const std::size_t batch = vx.rows();
    const std::size_t in = vx.cols();
    const std::size_t out_dim = vw.rows();
    if (vw.cols() != in) {
        throw shape_error("Tape::linear: weight cols " + std::to_string(vw.cols()) + " != input cols " +
                          std::to_string(in));
    }
    if (vb.size() != out_dim) {
        throw shape_error("Tape::linear: bias size mismatch");
    }
    Tensor out(batch, out_dim);
#pragma omp parallel for schedule(static) if (batch * out_dim * in > 1u << 16)
    for (std::size_t r = 0; r < batch; ++r) {
        const double* xrow = &vx.values[r * in];
        double* yrow = &out.values[r * out_dim];
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wrow = &vw.values[o * in];
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (std::size_t i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
            yrow[o] = vb.values[o] + acc;
        }
    }
    return push(std::move(out), [x, w, b, batch, in, out_dim](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        const Tensor& vx2 = t.value(x);
        const Tensor& vw2 = t.value(w);
        Tensor& gx = t.grad_mut(x);
        Tensor& gw = t.grad_mut(w);
        Tensor& gb = t.grad_mut(b);
        // dx = g W
#pragma omp parallel for schedule(static) if (batch * out_dim * in > 1u << 16)
        for (std::size_t r = 0; r < batch; ++r) {
            const double* grow = &g.values[r * out_dim];
            double* gxrow = &gx.values[r * in];
            for (std::size_t o = 0; o < out_dim; ++o) {
                const double c = grow[o];
                if (c == 0.0) continue;
                const double* wrow = &vw2.values[o * in];
#pragma omp simd
                for (std::size_t i = 0; i < in; ++i) gxrow[i] += c * wrow[i];
            }
        }
        // dW = g^T x, row o of dW accumulated over the batch in index order
#pragma omp parallel for schedule(static) if (batch * out_dim * in > 1u << 16)
        for (std::size_t o = 0; o < out_dim; ++o) {
            double* gwrow = &gw.values[o * in];
            double gbo = 0.0;
            for (std::size_t r = 0; r < batch; ++r) {
                const double c = g.values[r * out_dim + o];
                gbo += c;
                if (c == 0.0) continue;
                const double* xrow = &vx2.values[r * in];
#pragma omp simd
                for (std::size_t i = 0; i < in; ++i) gwrow[i] += c * xrow[i];
            }
            gb.values[o] += gbo;
        }
    });
}

Tape::Id Tape::mul_row(Id a, Id r) {
    const Tensor& va = value(a);
    const Tensor& vr = value(r);
    if (vr.size() != va.cols()) {
        throw shape_error("Tape::mul_row: row size mismatch");
    }
    Tensor out = va;
    const std::size_t cols = va.cols();
    for (std::size_t i = 0; i < va.rows(); ++i) {
        for (std::size_t j = 0; j < cols; ++j) out.values[i * cols + j] *= vr.values[j];
    }
    return push(std::move(out), [a, r, cols](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        const Tensor& va2 = t.value(a);
        const Tensor& vr2 = t.value(r);
        Tensor& ga = t.grad_mut(a);
        Tensor& gr = t.grad_mut(r);
        for (std::size_t i = 0; i < va2.rows(); ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                const double gij = g.values[i * cols + j];
                ga.values[i * cols + j] += gij * vr2.values[j];
                gr.values[j] += gij * va2.values[i * cols + j];
            }
        }
    });
}

Tape::Id Tape::activation(Id a, Activation kind) {
    Tensor out = value(a);
    switch (kind) {
        case Activation::Tanh:
            for (double& v : out.values) v = std::tanh(v);
            break;
        case Activation::Relu:
            for (double& v : out.values) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::Softplus:
            for (double& v : out.values) v = v > 30.0 ? v : std::log1p(std::exp(std::min(v, 30.0)));
            break;
    }
    return push(std::move(out), [a, kind](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        const Tensor& x = t.value(a);
        Tensor& ga = t.grad_mut(a);
        switch (kind) {
            case Activation::Tanh:
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga.values[i] += g.values[i] * (1.0 - y.values[i] * y.values[i]);
                break;
            case Activation::Relu:
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga.values[i] += x.values[i] > 0.0 ? g.values[i] : 0.0;
                break;
            case Activation::Softplus:
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga.values[i] += g.values[i] / (1.0 + std::exp(-x.values[i]));
                break;
        }
    });
}

Tape::Id Tape::square(Id a) {
    Tensor out = value(a);
    for (double& v : out.values) v *= v;
    return push(std::move(out), [a](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += 2.0 * g.values[i] * x.values[i];
    });
}

Tape::Id Tape::sum(Id a) {
    double s = 0.0;
    for (double v : value(a).values) s += v;
    return push(Tensor::scalar(s), [a](Tape& t, Id self) {
        const double g = t.grad(self).values[0];
        Tensor& ga = t.grad_mut(a);
        for (double& v : ga.values) v += g;
    });
}

Tape::Id Tape::mean(Id a) {
    const std::size_t n = value(a).size();
    double s = 0.0;
    for (double v : value(a).values) s += v;
    return push(Tensor::scalar(s / static_cast<double>(n)), [a, n](Tape& t, Id self) {
        const double g = t.grad(self).values[0] / static_cast<double>(n);
        Tensor& ga = t.grad_mut(a);
        for (double& v : ga.values) v += g;
    });
}

Tape::Id Tape::dot_const(Id a, Tensor w) {
    require_same_shape(value(a), w, "Tape::dot_const");
    double s = 0.0;
    const Tensor& va = value(a);
    for (std::size_t i = 0; i < w.size(); ++i) s += va.values[i] * w.values[i];
    auto wp = std::make_shared<Tensor>(std::move(w));
    return push(Tensor::scalar(s), [a, wp](Tape& t, Id self) {
        const double g = t.grad(self).values[0];
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < wp->size(); ++i) ga.values[i] += g * wp->values[i];
    });
}

Tape::Id Tape::affine_diag(Id a, Tensor s, Tensor t_shift) {
    const Tensor& va = value(a);
    const std::size_t cols = va.cols();
    if (s.size() != cols || t_shift.size() != cols) {
        throw shape_error("Tape::affine_diag: scale/shift size mismatch");
    }
    Tensor out = va;
    for (std::size_t i = 0; i < va.rows(); ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out.values[i * cols + j] = va.values[i * cols + j] * s.values[j] + t_shift.values[j];
        }
    }
    auto sp = std::make_shared<Tensor>(std::move(s));
    return push(std::move(out), [a, sp, cols](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                ga.values[i * cols + j] += g.values[i * cols + j] * sp->values[j];
            }
        }
    });
}

Tape::Id Tape::concat_cols(Id a, Id b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (va.rows() != vb.rows()) {
        throw shape_error("Tape::concat_cols: row count mismatch");
    }
    const std::size_t ca = va.cols();
    const std::size_t cb = vb.cols();
    Tensor out(va.rows(), ca + cb);
    for (std::size_t i = 0; i < va.rows(); ++i) {
        for (std::size_t j = 0; j < ca; ++j) out(i, j) = va(i, j);
        for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = vb(i, j);
    }
    return push(std::move(out), [a, b, ca, cb](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        Tensor& gb = t.grad_mut(b);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < ca; ++j) ga.values[i * ca + j] += g(i, j);
            for (std::size_t j = 0; j < cb; ++j) gb.values[i * cb + j] += g(i, ca + j);
        }
    });
}

Tape::Id Tape::div_by_scalar(Id a, Id s) {
    if (value(s).size() != 1) {
        throw shape_error("Tape::div_by_scalar: divisor must be scalar");
    }
    const double sv = value(s).values[0];
    Tensor out = value(a);
    for (double& v : out.values) v /= sv;
    return push(std::move(out), [a, s, sv](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_mut(a);
        Tensor& gs = t.grad_mut(s);
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.values[i] += g.values[i] / sv;
            acc += g.values[i] * y.values[i];
        }
        gs.values[0] -= acc / sv;
    });
}

Tape::Id Tape::stack_scalars(const std::vector<Id>& ids) {
    Tensor out(1, ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (value(ids[k]).size() != 1) {
            throw shape_error("Tape::stack_scalars: inputs must be scalars");
        }
        out.values[k] = value(ids[k]).values[0];
    }
    return push(std::move(out), [ids](Tape& t, Id self) {
        const Tensor& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) t.grad_mut(ids[k]).values[0] += g.values[k];
    });
}

void Tape::backward(Id out) {
    if (value(out).size() != 1) {
        throw numeric_error("Tape::backward: output must be scalar");
    }
    for (Id i = 0; i <= out; ++i) {
        Node& n = nodes_[i];
        n.grad = Tensor::zeros(n.val.rows(), n.val.cols());
    }
    nodes_[out].grad.values[0] = 1.0;
    for (Id i = out; i >= 0; --i) {
        if (nodes_[i].back) {
            nodes_[i].back(*this, i);
        }
    }
}

}  // namespace sgp
