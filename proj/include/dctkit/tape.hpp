#pragma once

#include "errors.hpp"
#include "matrix.hpp"
#include "params.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace dctkit {

/// Handle to a value recorded on a Tape.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const noexcept { return id != npos; }
};

/**
 * @brief Records a forward computation and replays it backwards.
 *
 * Ops append a node holding their output value and a closure that maps the
 * node's gradient onto its inputs. `backward()` seeds a scalar root with 1,
 * replays closures in reverse order, and adds leaf gradients into the bound
 * `Parameter::grad` slots. Gradients accumulate across calls until the store
 * is zeroed.
 */
template <typename T>
class Tape {
public:
    using Matrix = DenseMatrix<T>;
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Var constant(Matrix value) {
        require_finite(value, "Tape::constant");
        return push_node(std::move(value), {}, false, nullptr);
    }

    Var param(Parameter<T>& p) {
        require_finite(p.value, p.name.c_str());
        return push_node(p.value, {}, p.trainable, &p);
    }

    /// Appends an op output. `inputs` decide whether the node needs a gradient.
    Var push(Matrix value, std::initializer_list<Var> inputs, BackwardFn back, const char* op) {
        if (!all_finite(value)) {
            throw NumericError(std::string(op) + ": produced a non-finite value");
        }
        bool needs = false;
        for (Var v : inputs) {
            check(v);
            needs = needs || nodes_[v.id].needs_grad;
        }
        return push_node(std::move(value), needs ? std::move(back) : BackwardFn{}, needs, nullptr);
    }

    const Matrix& value(Var v) const {
        check(v);
        return nodes_[v.id].value;
    }

    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

    /// Gradient buffer of node `id`; only valid during backward for nodes that need one.
    Matrix& grad(std::size_t id) { return nodes_[id].grad; }
    Matrix& grad(Var v) { return nodes_[v.id].grad; }

    std::size_t size() const noexcept { return nodes_.size(); }

    /// Folds a discrete decision (ReLU mask, argmax, selected index) into the branch signature.
    void note_branch(std::uint64_t v) noexcept { branch_ = mix_seed(branch_ ^ v) + 0x9e3779b97f4a7c15ULL; }

    /// Equal signatures mean two recordings took the same piecewise-smooth branch.
    std::uint64_t branch_signature() const noexcept { return branch_; }

    void backward(Var root) {
        if (nodes_.empty() || !root.valid() || root.id >= nodes_.size()) {
            throw StateError("Tape::backward: no recorded forward pass for this root");
        }
        const Matrix& rv = nodes_[root.id].value;
        if (rv.rows() != 1 || rv.cols() != 1) {
            throw StateError("Tape::backward: root must be a scalar, got " + rv.shape_string());
        }
        for (std::size_t i = 0; i <= root.id; ++i) {
            auto& n = nodes_[i];
            if (n.needs_grad) {
                n.grad = Matrix(n.value.rows(), n.value.cols());
            }
        }
        if (!nodes_[root.id].needs_grad) {
            return;
        }
        nodes_[root.id].grad[0] = T(1);
        for (std::size_t i = root.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.needs_grad) {
                continue;
            }
            if (n.back) {
                n.back(*this, i);
            }
            if (n.param != nullptr) {
                auto& pg = n.param->grad;
                for (std::size_t e = 0; e < pg.size(); ++e) {
                    pg[e] += n.grad[e];
                }
            }
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        BackwardFn back;
        bool needs_grad = false;
        Parameter<T>* param = nullptr;
    };

    void check(Var v) const {
        if (!v.valid() || v.id >= nodes_.size()) {
            throw StateError("Tape: handle does not belong to this tape");
        }
    }

    Var push_node(Matrix value, BackwardFn back, bool needs, Parameter<T>* p) {
        nodes_.push_back(Node{std::move(value), Matrix{}, std::move(back), needs, p});
        return Var{nodes_.size() - 1};
    }

    std::deque<Node> nodes_; // stable references across push
    std::uint64_t branch_ = 0;
};

namespace detail {

template <typename T>
void add_into(DenseMatrix<T>& dst, const DenseMatrix<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

// a^T * b without materialising the transpose.
template <typename T>
DenseMatrix<T> matmul_tn(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    DenseMatrix<T> out(a.cols(), b.cols());
    for (std::size_t p = 0; p < a.rows(); ++p) {
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const T av = a(p, i);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(i, j) += av * b(p, j);
            }
        }
    }
    return out;
}

// a * b^T.
template <typename T>
DenseMatrix<T> matmul_nt(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
    DenseMatrix<T> out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < a.cols(); ++p) {
                acc += a(i, p) * b(j, p);
            }
            out(i, j) = acc;
        }
    }
    return out;
}

} // namespace detail

// Differentiable ops. Each validates shapes, computes its value with the plain
// DenseMatrix routines, and records the analytic backward.
namespace ag {

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
    auto out = dctkit::matmul(t.value(a), t.value(b));
    return t.push(std::move(out), {a, b}, [a, b](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        if (tp.needs_grad(a)) {
            detail::add_into(tp.grad(a), detail::matmul_nt(g, tp.value(b)));
        }
        if (tp.needs_grad(b)) {
            detail::add_into(tp.grad(b), detail::matmul_tn(tp.value(a), g));
        }
    }, "matmul");
}

template <typename T>
Var transpose(Tape<T>& t, Var a) {
    return t.push(dctkit::transpose(t.value(a)), {a}, [a](Tape<T>& tp, std::size_t self) {
        detail::add_into(tp.grad(a), dctkit::transpose(tp.grad(self)));
    }, "transpose");
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "add");
    auto out = t.value(a);
    detail::add_into(out, t.value(b));
    return t.push(std::move(out), {a, b}, [a, b](Tape<T>& tp, std::size_t self) {
        for (Var v : {a, b}) {
            if (tp.needs_grad(v)) {
                detail::add_into(tp.grad(v), tp.grad(self));
            }
        }
    }, "add");
}

template <typename T>
Var scale(Tape<T>& t, Var a, T s) {
    auto out = t.value(a);
    for (auto& v : out.values()) {
        v *= s;
    }
    return t.push(std::move(out), {a}, [a, s](Tape<T>& tp, std::size_t self) {
        auto& ga = tp.grad(a);
        const auto& g = tp.grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += s * g[i];
        }
    }, "scale");
}

/// Adds a 1xC row to every row of an RxC matrix.
template <typename T>
Var add_row(Tape<T>& t, Var a, Var row) {
    const auto& av = t.value(a);
    const auto& rv = t.value(row);
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
        throw ShapeError("add_row: cannot broadcast " + rv.shape_string() + " over " + av.shape_string());
    }
    auto out = av;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) {
            out(i, j) += rv(0, j);
        }
    }
    return t.push(std::move(out), {a, row}, [a, row](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        if (tp.needs_grad(a)) {
            detail::add_into(tp.grad(a), g);
        }
        if (tp.needs_grad(row)) {
            auto& gr = tp.grad(row);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    gr(0, j) += g(i, j);
                }
            }
        }
    }, "add_row");
}

template <typename T>
Var relu(Tape<T>& t, Var a) {
    auto out = t.value(a);
    std::uint64_t mask = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const bool on = out[i] > T(0);
        mask = (mask << 1) | static_cast<std::uint64_t>(on);
        if (i % 64 == 63) {
            t.note_branch(mask);
            mask = 0;
        }
        out[i] = on ? out[i] : T(0);
    }
    t.note_branch(mask);
    return t.push(std::move(out), {a}, [a](Tape<T>& tp, std::size_t self) {
        const auto& x = tp.value(a);
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] > T(0)) {
                ga[i] += g[i];
            }
        }
    }, "relu");
}

template <typename T>
Var softmax_rows(Tape<T>& t, Var a) {
    return t.push(dctkit::softmax_rows(t.value(a)), {a}, [a](Tape<T>& tp, std::size_t self) {
        const auto& y = tp.value(Var{self});
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < y.cols(); ++j) {
                dot += g(i, j) * y(i, j);
            }
            for (std::size_t j = 0; j < y.cols(); ++j) {
                ga(i, j) += y(i, j) * (g(i, j) - dot);
            }
        }
    }, "softmax_rows");
}

template <typename T>
Var softmax_cols(Tape<T>& t, Var a) {
    return t.push(dctkit::softmax_cols(t.value(a)), {a}, [a](Tape<T>& tp, std::size_t self) {
        const auto& y = tp.value(Var{self});
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a);
        for (std::size_t j = 0; j < y.cols(); ++j) {
            T dot = 0;
            for (std::size_t i = 0; i < y.rows(); ++i) {
                dot += g(i, j) * y(i, j);
            }
            for (std::size_t i = 0; i < y.rows(); ++i) {
                ga(i, j) += y(i, j) * (g(i, j) - dot);
            }
        }
    }, "softmax_cols");
}

template <typename T>
Var reshape(Tape<T>& t, Var a, std::size_t rows, std::size_t cols) {
    const auto& av = t.value(a);
    if (av.size() != rows * cols) {
        throw ShapeError("reshape: cannot view " + av.shape_string() + " as " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
    std::vector<T> vals(av.values().begin(), av.values().end());
    return t.push(DenseMatrix<T>(rows, cols, std::move(vals)), {a}, [a](Tape<T>& tp, std::size_t self) {
        detail::add_into(tp.grad(a), tp.grad(self));
    }, "reshape");
}

/// out[r] = a[indices[r]]; backward scatter-adds.
template <typename T>
Var gather_rows(Tape<T>& t, Var a, std::vector<std::size_t> indices) {
    auto out = dctkit::gather_rows(t.value(a), std::span<const std::size_t>(indices));
    return t.push(std::move(out), {a}, [a, idx = std::move(indices)](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                ga(idx[r], c) += g(r, c);
            }
        }
    }, "gather_rows");
}

/**
 * out[r] = sum_m weights[r*width + m] * a[indices[r*width + m]].
 * Weights are constants; used by interpolation upsampling.
 */
template <typename T>
Var weighted_gather(Tape<T>& t, Var a, std::size_t out_rows, std::size_t width, std::vector<std::size_t> indices,
                    std::vector<T> weights) {
    const auto& av = t.value(a);
    if (indices.size() != out_rows * width || weights.size() != indices.size()) {
        throw ShapeError("weighted_gather: index/weight table does not match " + std::to_string(out_rows) + "x" +
                         std::to_string(width));
    }
    DenseMatrix<T> out(out_rows, av.cols());
    for (std::size_t r = 0; r < out_rows; ++r) {
        for (std::size_t m = 0; m < width; ++m) {
            const std::size_t src = indices[r * width + m];
            if (src >= av.rows()) {
                throw IntegrityError("weighted_gather: source row " + std::to_string(src) + " out of range");
            }
            const T w = weights[r * width + m];
            for (std::size_t c = 0; c < av.cols(); ++c) {
                out(r, c) += w * av(src, c);
            }
        }
    }
    return t.push(std::move(out), {a},
                  [a, width, idx = std::move(indices), w = std::move(weights)](Tape<T>& tp, std::size_t self) {
                      const auto& g = tp.grad(self);
                      auto& ga = tp.grad(a);
                      for (std::size_t r = 0; r < g.rows(); ++r) {
                          for (std::size_t m = 0; m < width; ++m) {
                              const std::size_t src = idx[r * width + m];
                              const T wv = w[r * width + m];
                              for (std::size_t c = 0; c < g.cols(); ++c) {
                                  ga(src, c) += wv * g(r, c);
                              }
                          }
                      }
                  }, "weighted_gather");
}

/// Channel-wise max over consecutive groups of `group` rows. Ties go to the first row.
template <typename T>
Var group_max(Tape<T>& t, Var a, std::size_t group) {
    const auto& av = t.value(a);
    if (group == 0 || av.rows() % group != 0) {
        throw ShapeError("group_max: " + std::to_string(av.rows()) + " rows not divisible into groups of " +
                         std::to_string(group));
    }
    const std::size_t groups = av.rows() / group;
    DenseMatrix<T> out(groups, av.cols());
    std::vector<std::size_t> argmax(groups * av.cols());
    for (std::size_t s = 0; s < groups; ++s) {
        for (std::size_t c = 0; c < av.cols(); ++c) {
            std::size_t best = s * group;
            for (std::size_t r = s * group + 1; r < (s + 1) * group; ++r) {
                if (av(r, c) > av(best, c)) {
                    best = r;
                }
            }
            out(s, c) = av(best, c);
            argmax[s * av.cols() + c] = best;
            t.note_branch(best);
        }
    }
    return t.push(std::move(out), {a}, [a, am = std::move(argmax)](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        auto& ga = tp.grad(a);
        for (std::size_t s = 0; s < g.rows(); ++s) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                ga(am[s * g.cols() + c], c) += g(s, c);
            }
        }
    }, "group_max");
}

/// Sum of all entries as a 1x1 value.
template <typename T>
Var sum(Tape<T>& t, Var a) {
    T acc = 0;
    for (T v : t.value(a).values()) {
        acc += v;
    }
    return t.push(DenseMatrix<T>(1, 1, acc), {a}, [a](Tape<T>& tp, std::size_t self) {
        const T g = tp.grad(self)[0];
        for (auto& v : tp.grad(a).values()) {
            v += g;
        }
    }, "sum");
}

/// Mean softmax cross-entropy over rows of `logits` against integer labels.
template <typename T>
Var cross_entropy(Tape<T>& t, Var logits, std::vector<int> labels) {
    const auto& z = t.value(logits);
    if (labels.size() != z.rows()) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(z.rows()) + " rows");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= z.cols()) {
            throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at point " + std::to_string(i) +
                            " outside [0," + std::to_string(z.cols()) + ")");
        }
    }
    auto probs = dctkit::softmax_rows(z);
    T loss = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const T mx = *std::max_element(z.row(i).begin(), z.row(i).end());
        T lse = 0;
        for (T v : z.row(i)) {
            lse += std::exp(v - mx);
        }
        loss += (std::log(lse) + mx) - z(i, static_cast<std::size_t>(labels[i]));
    }
    const T n = static_cast<T>(std::max<std::size_t>(z.rows(), 1));
    loss /= n;
    return t.push(DenseMatrix<T>(1, 1, loss), {logits},
                  [logits, p = std::move(probs), lab = std::move(labels), n](Tape<T>& tp, std::size_t self) {
                      const T g = tp.grad(self)[0] / n;
                      auto& gz = tp.grad(logits);
                      for (std::size_t i = 0; i < p.rows(); ++i) {
                          for (std::size_t j = 0; j < p.cols(); ++j) {
                              const T onehot = static_cast<std::size_t>(lab[i]) == j ? T(1) : T(0);
                              gz(i, j) += g * (p(i, j) - onehot);
                          }
                      }
                  }, "cross_entropy");
}

} // namespace ag
} // namespace dctkit
