#pragma once

#include "errors.hpp"
#include "matrix.hpp"
#include "params.hpp"
#include "tape.hpp"

#include <cmath>
#include <string>

namespace dctkit {

enum class Mode { train, eval };

struct NormOptions {
    double eps = 1e-5;
    double momentum = 0.9; // weight kept by the running statistics each update
};

template <typename T>
struct LinearParams {
    Parameter<T>* weight = nullptr; // in x out
    Parameter<T>* bias = nullptr;   // 1 x out
    std::size_t in = 0;
    std::size_t out = 0;
};

template <typename T>
struct NormParams {
    Parameter<T>* scale = nullptr;
    Parameter<T>* shift = nullptr;
    Parameter<T>* running_mean = nullptr;
    Parameter<T>* running_var = nullptr;
};

/// Linear -> per-channel normalization over rows -> ReLU.
template <typename T>
struct LbrParams {
    LinearParams<T> linear;
    NormParams<T> norm;
};

template <typename T>
LinearParams<T> register_linear(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                                bool with_bias = true) {
    LinearParams<T> p;
    p.in = in;
    p.out = out;
    p.weight = &store.add_uniform(prefix + ".weight", in, out, in);
    if (with_bias) {
        p.bias = &store.add_uniform(prefix + ".bias", 1, out, in);
    }
    return p;
}

template <typename T>
NormParams<T> register_norm(ParamStore<T>& store, const std::string& prefix, std::size_t width) {
    NormParams<T> p;
    p.scale = &store.add_constant(prefix + ".scale", 1, width, T(1));
    p.shift = &store.add_constant(prefix + ".shift", 1, width, T(0));
    p.running_mean = &store.add_constant(prefix + ".running_mean", 1, width, T(0), false);
    p.running_var = &store.add_constant(prefix + ".running_var", 1, width, T(1), false);
    return p;
}

template <typename T>
LbrParams<T> register_lbr(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out) {
    return LbrParams<T>{register_linear(store, prefix + ".linear", in, out), register_norm(store, prefix + ".norm", out)};
}

namespace ag {

template <typename T>
Var linear(Tape<T>& t, Var x, const LinearParams<T>& p) {
    if (t.value(x).cols() != p.in) {
        throw ShapeError("linear: input width " + std::to_string(t.value(x).cols()) + " does not match layer (" +
                         p.weight->name + ") input width " + std::to_string(p.in));
    }
    Var y = matmul(t, x, t.param(*p.weight));
    if (p.bias != nullptr) {
        y = add_row(t, y, t.param(*p.bias));
    }
    return y;
}

/**
 * Per-channel normalization across the rows (points) of one cloud.
 *
 * Training mode uses the batch mean and biased variance and folds them into the
 * running statistics; eval mode reads the running statistics only, so a single
 * row is well defined there.
 */
template <typename T>
Var batch_norm(Tape<T>& t, Var x, const NormParams<T>& p, Mode mode, NormOptions opt = {}) {
    const auto& xv = t.value(x);
    const std::size_t n = xv.rows();
    const std::size_t c = xv.cols();
    if (p.scale->value.cols() != c) {
        throw ShapeError("batch_norm: width " + std::to_string(c) + " does not match " + p.scale->name);
    }
    Var gamma = t.param(*p.scale);
    Var beta = t.param(*p.shift);
    DenseMatrix<T> xhat(n, c);
    DenseMatrix<T> inv_std(1, c);

    if (mode == Mode::train) {
        if (n == 0) {
            throw ShapeError("batch_norm: empty input in training mode");
        }
        for (std::size_t j = 0; j < c; ++j) {
            T mean = 0;
            for (std::size_t i = 0; i < n; ++i) {
                mean += xv(i, j);
            }
            mean /= static_cast<T>(n);
            T var = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const T d = xv(i, j) - mean;
                var += d * d;
            }
            var /= static_cast<T>(n);
            inv_std[j] = T(1) / std::sqrt(var + static_cast<T>(opt.eps));
            for (std::size_t i = 0; i < n; ++i) {
                xhat(i, j) = (xv(i, j) - mean) * inv_std[j];
            }
            const T m = static_cast<T>(opt.momentum);
            p.running_mean->value[j] = m * p.running_mean->value[j] + (T(1) - m) * mean;
            p.running_var->value[j] = m * p.running_var->value[j] + (T(1) - m) * var;
        }
    } else {
        for (std::size_t j = 0; j < c; ++j) {
            inv_std[j] = T(1) / std::sqrt(p.running_var->value[j] + static_cast<T>(opt.eps));
            for (std::size_t i = 0; i < n; ++i) {
                xhat(i, j) = (xv(i, j) - p.running_mean->value[j]) * inv_std[j];
            }
        }
    }

    const auto& gv = t.value(gamma);
    const auto& bv = t.value(beta);
    DenseMatrix<T> out(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out(i, j) = gv[j] * xhat(i, j) + bv[j];
        }
    }

    const bool batch_stats = mode == Mode::train;
    return t.push(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xh = std::move(xhat), is = std::move(inv_std), batch_stats](Tape<T>& tp,
                                                                                              std::size_t self) {
                      const auto& g = tp.grad(self);
                      const std::size_t rows = g.rows();
                      const std::size_t cols = g.cols();
                      const auto& gam = tp.value(gamma);
                      DenseMatrix<T> sum_g(1, cols);
                      DenseMatrix<T> sum_gx(1, cols);
                      for (std::size_t i = 0; i < rows; ++i) {
                          for (std::size_t j = 0; j < cols; ++j) {
                              sum_g[j] += g(i, j);
                              sum_gx[j] += g(i, j) * xh(i, j);
                          }
                      }
                      if (tp.needs_grad(gamma)) {
                          detail::add_into(tp.grad(gamma), sum_gx);
                      }
                      if (tp.needs_grad(beta)) {
                          detail::add_into(tp.grad(beta), sum_g);
                      }
                      if (!tp.needs_grad(x)) {
                          return;
                      }
                      auto& gx = tp.grad(x);
                      const T nr = static_cast<T>(rows);
                      for (std::size_t i = 0; i < rows; ++i) {
                          for (std::size_t j = 0; j < cols; ++j) {
                              if (batch_stats) {
                                  gx(i, j) += gam[j] * is[j] / nr *
                                              (nr * g(i, j) - sum_g[j] - xh(i, j) * sum_gx[j]);
                              } else {
                                  gx(i, j) += gam[j] * is[j] * g(i, j);
                              }
                          }
                      }
                  }, "batch_norm");
}

template <typename T>
Var lbr(Tape<T>& t, Var x, const LbrParams<T>& p, Mode mode) {
    return relu(t, batch_norm(t, linear(t, x, p.linear), p.norm, mode));
}

} // namespace ag

/// Value-level LBR. In training mode this also updates the running statistics.
template <typename T>
DenseMatrix<T> lbr_forward(const DenseMatrix<T>& x, const LbrParams<T>& p, Mode mode) {
    Tape<T> t;
    return t.value(ag::lbr(t, t.constant(x), p, mode));
}

} // namespace dctkit
