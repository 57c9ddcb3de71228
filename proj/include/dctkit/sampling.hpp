#pragma once

#include "errors.hpp"
#include "matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <thread>
#include <utility>
#include <vector>

/**
 * @file sampling.hpp
 *
 * @brief Feature-space density-peaks sampling and the farthest point sampling baseline.
 *
 * Both samplers are deterministic pure functions. All distances are squared
 * Euclidean, computed by brute force; at the sizes this library targets the
 * N x N table is cheaper than building a spatial index over high-dimensional features.
 */

namespace dctkit {

/// Row-major N x k table of neighbor indices.
struct NeighborTable {
    std::size_t rows = 0;
    std::size_t k = 0;
    std::vector<std::size_t> indices;

    std::size_t operator()(std::size_t i, std::size_t m) const noexcept { return indices[i * k + m]; }
    std::span<const std::size_t> row(std::size_t i) const noexcept { return {indices.data() + i * k, k}; }
};

/// Sorted ascending, distinct indices into the parent cloud.
struct SampleSet {
    std::vector<std::size_t> indices;
    std::size_t size() const noexcept { return indices.size(); }
};

struct DensityProfile {
    std::vector<double> density; // exp(-mean squared distance to the k nearest neighbors)
    std::vector<double> delta;   // distance to the nearest denser point
    std::vector<double> score;   // density * delta
    // log(delta) - mean kNN distance: same ordering as score, but survives exp underflow.
    std::vector<double> log_score;
    std::size_t k_used = 0;
};

/// Symmetric N x N table of squared distances between rows. Rows are split over
/// `threads` workers; every entry is computed by exactly one worker in a fixed order.
template <typename T>
DenseMatrix<T> pairwise_sq_dist(const DenseMatrix<T>& f, unsigned threads = 1) {
    const std::size_t n = f.rows();
    DenseMatrix<T> d(n, n);
    auto work = [&](std::size_t first, std::size_t stride) {
        for (std::size_t i = first; i < n; i += stride) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const T v = squared_distance(f.row(i), f.row(j));
                d(i, j) = v;
                d(j, i) = v;
            }
        }
    };
    threads = std::max(1u, threads);
    if (threads == 1 || n < 64) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w) {
            pool.emplace_back(work, w, threads);
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    return d;
}

namespace detail {

// k nearest other rows of a precomputed distance table, ordered by (distance, index).
template <typename T>
NeighborTable knn_from_distances(const DenseMatrix<T>& dist, std::size_t k) {
    const std::size_t n = dist.rows();
    NeighborTable table{n, k, std::vector<std::size_t>(n * k)};
    std::vector<std::size_t> cand;
    cand.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                cand.push_back(j);
            }
        }
        auto closer = [&](std::size_t a, std::size_t b) {
            return dist(i, a) < dist(i, b) || (dist(i, a) == dist(i, b) && a < b);
        };
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), closer);
        std::copy_n(cand.begin(), k, table.indices.begin() + static_cast<std::ptrdiff_t>(i * k));
    }
    return table;
}

inline void require_k(std::size_t k, std::size_t n, const char* where) {
    if (k >= n) {
        throw ParameterError(std::string(where) + ": k=" + std::to_string(k) + " must be smaller than N=" +
                             std::to_string(n));
    }
}

template <typename T>
std::vector<double> mean_knn_distance(const DenseMatrix<T>& dist, const NeighborTable& nb) {
    std::vector<double> out(dist.rows(), 0.0);
    for (std::size_t i = 0; i < dist.rows(); ++i) {
        T acc = 0;
        for (std::size_t m = 0; m < nb.k; ++m) {
            acc += dist(i, nb(i, m));
        }
        out[i] = nb.k == 0 ? 0.0 : static_cast<double>(acc) / static_cast<double>(nb.k);
    }
    return out;
}

template <typename T>
std::vector<double> delta_from_distances(const DenseMatrix<T>& dist, const std::vector<double>& density) {
    const std::size_t n = dist.rows();
    std::vector<double> delta(n, 0.0);
    if (n == 1) {
        return delta;
    }
    for (std::size_t i = 0; i < n; ++i) {
        bool found = false;
        T best = std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (density[j] > density[i] && dist(i, j) < best) {
                best = dist(i, j);
                found = true;
            }
        }
        if (!found) {
            best = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) {
                    best = std::max(best, dist(i, j));
                }
            }
        }
        delta[i] = static_cast<double>(best);
    }
    return delta;
}

} // namespace detail

/// The k nearest other points of every row, ties to the smaller index.
template <typename T>
NeighborTable knn_feature(const DenseMatrix<T>& features, std::size_t k) {
    detail::require_k(k, features.rows(), "knn_feature");
    require_finite(features, "knn_feature");
    return detail::knn_from_distances(pairwise_sq_dist(features), k);
}

/// exp(-(1/k) * sum of squared feature distances to the k nearest neighbors).
template <typename T>
std::vector<double> local_density(const DenseMatrix<T>& features, std::size_t k) {
    detail::require_k(k, features.rows(), "local_density");
    require_finite(features, "local_density");
    const auto dist = pairwise_sq_dist(features);
    auto mean = detail::mean_knn_distance(dist, detail::knn_from_distances(dist, k));
    for (auto& m : mean) {
        m = std::exp(-m);
    }
    return mean;
}

/**
 * Squared feature distance to the closest point of strictly higher density.
 * Points with no denser point (every density maximum, ties included) take the
 * largest squared distance to any other point instead. A single point gets 0.
 */
template <typename T>
std::vector<double> distance_indicator(const DenseMatrix<T>& features, const std::vector<double>& density) {
    if (density.size() != features.rows()) {
        throw ShapeError("distance_indicator: " + std::to_string(density.size()) + " densities for " +
                         std::to_string(features.rows()) + " points");
    }
    require_finite(features, "distance_indicator");
    return detail::delta_from_distances(pairwise_sq_dist(features), density);
}

/// Density, distance indicator and score from one shared distance table.
template <typename T>
DensityProfile density_profile(const DenseMatrix<T>& features, std::size_t k, unsigned threads = 1) {
    detail::require_k(k, features.rows(), "density_profile");
    require_finite(features, "density_profile");
    const auto dist = pairwise_sq_dist(features, threads);
    DensityProfile prof;
    prof.k_used = k;
    const auto mean = detail::mean_knn_distance(dist, detail::knn_from_distances(dist, k));
    prof.density.resize(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        prof.density[i] = std::exp(-mean[i]);
    }
    prof.delta = detail::delta_from_distances(dist, prof.density);
    prof.score.resize(mean.size());
    prof.log_score.resize(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        prof.score[i] = prof.density[i] * prof.delta[i];
        prof.log_score[i] = prof.delta[i] > 0 ? std::log(prof.delta[i]) - mean[i]
                                              : -std::numeric_limits<double>::infinity();
    }
    return prof;
}

/// Indices ordered by descending score; exact score ties fall back to log-score, then the smaller index.
inline std::vector<std::size_t> rank_by_score(const DensityProfile& prof) {
    std::vector<std::size_t> order(prof.score.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (prof.score[a] != prof.score[b]) {
            return prof.score[a] > prof.score[b];
        }
        if (prof.log_score[a] != prof.log_score[b]) {
            return prof.log_score[a] > prof.log_score[b];
        }
        return a < b;
    });
    return order;
}

/// The `s` highest-scoring points under density-peaks scoring in feature space.
template <typename T>
std::pair<SampleSet, DensityProfile> sds_sample(const DenseMatrix<T>& features, std::size_t s, std::size_t k,
                                                unsigned threads = 1) {
    if (s < 1 || s > features.rows()) {
        throw ParameterError("sds_sample: s=" + std::to_string(s) + " outside [1, " +
                             std::to_string(features.rows()) + "]");
    }
    auto prof = density_profile(features, k, threads);
    auto order = rank_by_score(prof);
    SampleSet out{std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s))};
    std::sort(out.indices.begin(), out.indices.end());
    return {std::move(out), std::move(prof)};
}

/// Iterative max-min selection over squared Euclidean distance, seeded at `start`.
template <typename T>
SampleSet fps_sample(const DenseMatrix<T>& coords, std::size_t s, std::size_t start = 0) {
    const std::size_t n = coords.rows();
    if (s < 1 || s > n) {
        throw ParameterError("fps_sample: s=" + std::to_string(s) + " outside [1, " + std::to_string(n) + "]");
    }
    if (start >= n) {
        throw ParameterError("fps_sample: start index " + std::to_string(start) + " out of range");
    }
    require_finite(coords, "fps_sample");
    std::vector<T> mind(n, std::numeric_limits<T>::infinity());
    std::vector<char> taken(n, 0);
    SampleSet out;
    out.indices.reserve(s);
    std::size_t last = start;
    for (std::size_t step = 0; step < s; ++step) {
        out.indices.push_back(last);
        taken[last] = 1;
        if (step + 1 == s) {
            break;
        }
        std::size_t next = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) {
                continue;
            }
            mind[i] = std::min(mind[i], squared_distance(coords.row(i), coords.row(last)));
            if (next == n || mind[i] > mind[next]) {
                next = i;
            }
        }
        last = next;
    }
    std::sort(out.indices.begin(), out.indices.end());
    return out;
}

} // namespace dctkit
