#pragma once

#include "errors.hpp"
#include "layers.hpp"
#include "matrix.hpp"
#include "tape.hpp"

#include <cmath>
#include <string>

namespace dctkit {

/// Single-head query/key/value projections, each D x D.
template <typename T>
struct AttentionWeights {
    Parameter<T>* query = nullptr;
    Parameter<T>* key = nullptr;
    Parameter<T>* value = nullptr;
    std::size_t width = 0;
};

/// Maps a relative offset c_i - c_j to one attention bias through 3 -> hidden -> 1 with ReLU.
template <typename T>
struct PositionBiasParams {
    LinearParams<T> hidden;
    LinearParams<T> out;
};

template <typename T>
struct GflParams {
    AttentionWeights<T> psa;
    PositionBiasParams<T> position;
    AttentionWeights<T> csa;
    LbrParams<T> fuse;
};

struct GflOptions {
    bool use_psa = true;
    bool use_csa = true;
};

template <typename T>
AttentionWeights<T> register_attention(ParamStore<T>& store, const std::string& prefix, std::size_t width) {
    AttentionWeights<T> w;
    w.width = width;
    w.query = &store.add_uniform(prefix + ".wq", width, width, width);
    w.key = &store.add_uniform(prefix + ".wk", width, width, width);
    w.value = &store.add_uniform(prefix + ".wv", width, width, width);
    return w;
}

template <typename T>
PositionBiasParams<T> register_position_bias(ParamStore<T>& store, const std::string& prefix,
                                             std::size_t hidden = 16) {
    if (hidden == 0) {
        throw ParameterError("position bias hidden width must be at least 1");
    }
    return {register_linear(store, prefix + ".hidden", 3, hidden), register_linear(store, prefix + ".out", hidden, 1)};
}

template <typename T>
GflParams<T> register_gfl(ParamStore<T>& store, const std::string& prefix, std::size_t width) {
    GflParams<T> p;
    p.psa = register_attention(store, prefix + ".psa", width);
    p.position = register_position_bias(store, prefix + ".pos");
    p.csa = register_attention(store, prefix + ".csa", width);
    p.fuse = register_lbr(store, prefix + ".lbr", width, width);
    return p;
}

namespace detail {

template <typename T>
void require_width(const DenseMatrix<T>& x, const AttentionWeights<T>& w, const char* where) {
    if (x.cols() != w.width) {
        throw ShapeError(std::string(where) + ": input width " + std::to_string(x.cols()) +
                         " does not match attention width " + std::to_string(w.width));
    }
}

// Row (i*S + j) holds c_i - c_j.
template <typename T>
DenseMatrix<T> relative_offsets(const DenseMatrix<T>& coords) {
    const std::size_t s = coords.rows();
    DenseMatrix<T> rel(s * s, 3);
    for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
            for (std::size_t c = 0; c < 3; ++c) {
                rel(i * s + j, c) = coords(i, c) - coords(j, c);
            }
        }
    }
    return rel;
}

} // namespace detail

namespace ag {

/**
 * Cross-attention from aggregated samples (queries) to the stage input (keys, values).
 * M = softmax_rows(Q K^T / sqrt(D) + A), where the 1 x N score row A is repeated for
 * every sample row. Returns M V with one row per sample.
 */
template <typename T>
Var cross_attention(Tape<T>& t, Var samples, Var input, Var scores, const AttentionWeights<T>& w) {
    detail::require_width(t.value(samples), w, "cross_attention_enhance");
    detail::require_width(t.value(input), w, "cross_attention_enhance");
    const auto& a = t.value(scores);
    if (a.size() != t.value(input).rows()) {
        throw ShapeError("cross_attention_enhance: " + std::to_string(a.size()) + " scores for " +
                         std::to_string(t.value(input).rows()) + " input points");
    }
    Var q = matmul(t, samples, t.param(*w.query));
    Var k = matmul(t, input, t.param(*w.key));
    Var v = matmul(t, input, t.param(*w.value));
    Var logits = scale(t, matmul(t, q, transpose(t, k)), T(1) / std::sqrt(static_cast<T>(w.width)));
    Var score_row = a.rows() == 1 ? scores : transpose(t, scores);
    Var attn = softmax_rows(t, add_row(t, logits, score_row));
    return matmul(t, attn, v);
}

/// S x S map B[i][j] = bias_net(c_i - c_j).
template <typename T>
Var position_bias(Tape<T>& t, const DenseMatrix<T>& coords, const PositionBiasParams<T>& p) {
    if (coords.cols() != 3) {
        throw ShapeError("position_bias: coordinates must be S x 3, got " + coords.shape_string());
    }
    const std::size_t s = coords.rows();
    Var rel = t.constant(detail::relative_offsets(coords));
    Var h = relu(t, linear(t, rel, p.hidden));
    return reshape(t, linear(t, h, p.out), s, s);
}

/// Point-wise self-attention: softmax_rows(Q K^T / sqrt(D) + B) V.
template <typename T>
Var psa(Tape<T>& t, Var x, const AttentionWeights<T>& w, const PositionBiasParams<T>& pos,
        const DenseMatrix<T>& coords) {
    detail::require_width(t.value(x), w, "psa");
    if (coords.rows() != t.value(x).rows()) {
        throw ShapeError("psa: " + std::to_string(coords.rows()) + " coordinates for " +
                         std::to_string(t.value(x).rows()) + " points");
    }
    Var q = matmul(t, x, t.param(*w.query));
    Var k = matmul(t, x, t.param(*w.key));
    Var v = matmul(t, x, t.param(*w.value));
    Var logits = scale(t, matmul(t, q, transpose(t, k)), T(1) / std::sqrt(static_cast<T>(w.width)));
    Var attn = softmax_rows(t, add(t, logits, position_bias(t, coords, pos)));
    return matmul(t, attn, v);
}

/// Channel-wise self-attention: V softmax_cols(K^T Q / sqrt(D)). Each output channel
/// is a convex combination of the value channels.
template <typename T>
Var csa(Tape<T>& t, Var x, const AttentionWeights<T>& w) {
    detail::require_width(t.value(x), w, "csa");
    Var q = matmul(t, x, t.param(*w.query));
    Var k = matmul(t, x, t.param(*w.key));
    Var v = matmul(t, x, t.param(*w.value));
    Var logits = scale(t, matmul(t, transpose(t, k), q), T(1) / std::sqrt(static_cast<T>(w.width)));
    return matmul(t, v, softmax_cols(t, logits));
}

/// x + LBR(psa(x) + csa(x)); a disabled branch contributes nothing.
template <typename T>
Var gfl_block(Tape<T>& t, Var x, const DenseMatrix<T>& coords, const GflParams<T>& p, Mode mode,
              GflOptions opt = {}) {
    Var fused;
    if (opt.use_psa) {
        fused = psa(t, x, p.psa, p.position, coords);
    }
    if (opt.use_csa) {
        Var c = csa(t, x, p.csa);
        fused = fused.valid() ? add(t, fused, c) : c;
    }
    if (!fused.valid()) {
        fused = t.constant(DenseMatrix<T>(t.value(x).rows(), t.value(x).cols()));
    }
    return add(t, x, lbr(t, fused, p.fuse, mode));
}

} // namespace ag

template <typename T>
DenseMatrix<T> cross_attention_enhance(const DenseMatrix<T>& samples, const DenseMatrix<T>& input,
                                       const DenseMatrix<T>& scores, const AttentionWeights<T>& w) {
    Tape<T> t;
    return t.value(ag::cross_attention(t, t.constant(samples), t.constant(input), t.constant(scores), w));
}

template <typename T>
DenseMatrix<T> psa(const DenseMatrix<T>& x, const AttentionWeights<T>& w, const PositionBiasParams<T>& pos,
                   const DenseMatrix<T>& coords) {
    Tape<T> t;
    return t.value(ag::psa(t, t.constant(x), w, pos, coords));
}

template <typename T>
DenseMatrix<T> csa(const DenseMatrix<T>& x, const AttentionWeights<T>& w) {
    Tape<T> t;
    return t.value(ag::csa(t, t.constant(x), w));
}

template <typename T>
DenseMatrix<T> gfl_block(const DenseMatrix<T>& x, const DenseMatrix<T>& coords, const GflParams<T>& p, Mode mode,
                         GflOptions opt = {}) {
    Tape<T> t;
    return t.value(ag::gfl_block(t, t.constant(x), coords, p, mode, opt));
}

} // namespace dctkit
