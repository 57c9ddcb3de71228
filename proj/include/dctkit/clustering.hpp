#pragma once

#include "errors.hpp"
#include "layers.hpp"
#include "matrix.hpp"
#include "sampling.hpp"
#include "tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace dctkit {

/// Sampled indices of one stage plus the cluster of every point of that stage's input.
struct ClusterMap {
    std::vector<std::size_t> sample_indices; // into the stage input, ascending
    std::vector<std::size_t> assignment;     // point -> position in sample_indices
    std::size_t stage_id = 0;

    std::size_t clusters() const noexcept { return sample_indices.size(); }
    std::size_t points() const noexcept { return assignment.size(); }

    /// Throws IntegrityError unless clusters cover every point, indices are in range,
    /// and every sampled point sits in its own cluster.
    void validate() const {
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] >= sample_indices.size()) {
                throw IntegrityError("cluster map: point " + std::to_string(i) + " assigned to cluster " +
                                     std::to_string(assignment[i]) + " of " + std::to_string(sample_indices.size()));
            }
        }
        for (std::size_t c = 0; c < sample_indices.size(); ++c) {
            if (sample_indices[c] >= assignment.size() || assignment[sample_indices[c]] != c) {
                throw IntegrityError("cluster map: sample " + std::to_string(c) + " is not a member of its cluster");
            }
        }
    }
};

template <typename T>
struct ScoreHeadParams {
    LinearParams<T> affine; // D -> 1
};

template <typename T>
ScoreHeadParams<T> register_score_head(ParamStore<T>& store, const std::string& prefix, std::size_t width) {
    return {register_linear(store, prefix, width, 1)};
}

template <typename T>
struct KnnPoolParams {
    LinearParams<T> mlp; // D -> D, followed by ReLU and max pooling
};

template <typename T>
KnnPoolParams<T> register_knn_pool(ParamStore<T>& store, const std::string& prefix, std::size_t width) {
    return {register_linear(store, prefix, width, width)};
}

/// Every point goes to the sample nearest in feature space (ties to the earlier
/// sample position); sampled points always keep their own cluster.
template <typename T>
ClusterMap sdc_assign(const DenseMatrix<T>& features, const SampleSet& samples, std::size_t stage_id = 0) {
    if (samples.size() == 0) {
        throw ParameterError("sdc_assign: empty sample set");
    }
    require_finite(features, "sdc_assign");
    const std::size_t n = features.rows();
    for (std::size_t s : samples.indices) {
        if (s >= n) {
            throw ParameterError("sdc_assign: sample index " + std::to_string(s) + " out of range for " +
                                 std::to_string(n) + " points");
        }
    }
    ClusterMap map{samples.indices, std::vector<std::size_t>(n), stage_id};
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        T best_d = std::numeric_limits<T>::infinity();
        for (std::size_t p = 0; p < samples.size(); ++p) {
            const T d = squared_distance(features.row(i), features.row(samples.indices[p]));
            if (d < best_d) {
                best_d = d;
                best = p;
            }
        }
        map.assignment[i] = best;
    }
    for (std::size_t p = 0; p < samples.size(); ++p) {
        map.assignment[samples.indices[p]] = p;
    }
    return map;
}

namespace detail {

inline std::vector<std::vector<std::size_t>> cluster_members(const ClusterMap& map) {
    std::vector<std::vector<std::size_t>> members(map.clusters());
    for (std::size_t i = 0; i < map.assignment.size(); ++i) {
        members[map.assignment[i]].push_back(i);
    }
    return members;
}

// For each sample: its k nearest points by coordinate distance (itself included), ties to the smaller index.
template <typename T>
std::vector<std::size_t> coordinate_groups(const DenseMatrix<T>& coords, const SampleSet& samples, std::size_t k) {
    const std::size_t n = coords.rows();
    std::vector<std::size_t> groups;
    groups.reserve(samples.size() * k);
    std::vector<std::size_t> cand(n);
    std::vector<T> dist(n);
    for (std::size_t s : samples.indices) {
        for (std::size_t j = 0; j < n; ++j) {
            dist[j] = squared_distance(coords.row(s), coords.row(j));
        }
        std::iota(cand.begin(), cand.end(), std::size_t{0});
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                          [&](std::size_t a, std::size_t b) {
                              return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
                          });
        groups.insert(groups.end(), cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return groups;
}

} // namespace detail

namespace ag {

/// a_i = w . f_i + b, returned as an N x 1 column.
template <typename T>
Var score_head(Tape<T>& t, Var features, const ScoreHeadParams<T>& p) {
    return linear(t, features, p.affine);
}

/**
 * Per-cluster softmax-weighted mean of member features:
 * s_c = sum_j exp(a_j) f_j / sum_j exp(a_j) over members j of cluster c.
 * Scores are shifted by the cluster maximum before exponentiation.
 */
template <typename T>
Var weighted_aggregate(Tape<T>& t, Var features, const ClusterMap& map, Var scores) {
    const auto& f = t.value(features);
    const auto& a = t.value(scores);
    if (a.size() != f.rows() || map.points() != f.rows()) {
        throw ShapeError("weighted_aggregate: " + std::to_string(a.size()) + " scores and " +
                         std::to_string(map.points()) + " assignments for " + std::to_string(f.rows()) + " points");
    }
    map.validate();
    auto members = detail::cluster_members(map);
    const std::size_t d = f.cols();
    DenseMatrix<T> out(map.clusters(), d);
    std::vector<T> alpha(f.rows());
    for (std::size_t c = 0; c < members.size(); ++c) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j : members[c]) {
            mx = std::max(mx, a[j]);
        }
        T total = 0;
        for (std::size_t j : members[c]) {
            alpha[j] = std::exp(a[j] - mx);
            total += alpha[j];
        }
        for (std::size_t j : members[c]) {
            alpha[j] /= total;
            for (std::size_t k = 0; k < d; ++k) {
                out(c, k) += alpha[j] * f(j, k);
            }
        }
    }
    return t.push(std::move(out), {features, scores},
                  [features, scores, asg = map.assignment, al = std::move(alpha)](Tape<T>& tp, std::size_t self) {
                      const auto& g = tp.grad(self);
                      const auto& fv = tp.value(features);
                      const auto& ov = tp.value(Var{self});
                      const bool gf = tp.needs_grad(features);
                      const bool ga = tp.needs_grad(scores);
                      for (std::size_t j = 0; j < asg.size(); ++j) {
                          const std::size_t c = asg[j];
                          T dot = 0;
                          for (std::size_t k = 0; k < fv.cols(); ++k) {
                              if (gf) {
                                  tp.grad(features)(j, k) += al[j] * g(c, k);
                              }
                              dot += g(c, k) * (fv(j, k) - ov(c, k));
                          }
                          if (ga) {
                              tp.grad(scores)[j] += al[j] * dot;
                          }
                      }
                  }, "weighted_aggregate");
}

/// PointNet++-style grouping baseline: k nearest points by coordinates, shared
/// linear + ReLU, channel-wise max over the group.
template <typename T>
Var knn_pool(Tape<T>& t, Var features, const DenseMatrix<T>& coords, const SampleSet& samples,
             const KnnPoolParams<T>& p, std::size_t k) {
    const std::size_t n = t.value(features).rows();
    detail::require_k(k, n, "knn_pool_baseline");
    if (coords.rows() != n) {
        throw ShapeError("knn_pool_baseline: coordinates do not match features");
    }
    auto groups = detail::coordinate_groups(coords, samples, k);
    Var grouped = gather_rows(t, features, std::move(groups));
    return group_max(t, relu(t, linear(t, grouped, p.mlp)), k);
}

} // namespace ag

template <typename T>
DenseMatrix<T> score_head(const DenseMatrix<T>& features, const ScoreHeadParams<T>& p) {
    Tape<T> t;
    return t.value(ag::score_head(t, t.constant(features), p));
}

template <typename T>
DenseMatrix<T> weighted_aggregate(const DenseMatrix<T>& features, const ClusterMap& map, const DenseMatrix<T>& scores) {
    Tape<T> t;
    return t.value(ag::weighted_aggregate(t, t.constant(features), map, t.constant(scores)));
}

template <typename T>
DenseMatrix<T> knn_pool_baseline(const DenseMatrix<T>& features, const DenseMatrix<T>& coords,
                                 const SampleSet& samples, const KnnPoolParams<T>& p, std::size_t k) {
    Tape<T> t;
    return t.value(ag::knn_pool(t, t.constant(features), coords, samples, p, k));
}

} // namespace dctkit
