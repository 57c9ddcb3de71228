#pragma once

#include "clustering.hpp"
#include "matrix.hpp"
#include "network.hpp"
#include "params.hpp"
#include "sampling.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace dctkit {

struct BenchReport {
    std::string method;
    std::size_t n = 0;
    std::size_t s = 0;
    std::size_t d = 0;
    std::size_t k = 0;
    std::size_t repetitions = 0;
    double median_ms = 0;
    double ratio_vs_baseline = 1.0; // median / baseline median
    unsigned threads = 1;
    std::uint64_t seed = 0;
};

inline constexpr std::size_t min_bench_reps = 5;

inline void write_bench_csv(const std::vector<BenchReport>& rows, std::ostream& os) {
    os << "method,n,s,d,k,reps,median_ms,ratio_vs_baseline,threads,seed\n";
    for (const auto& r : rows) {
        os << r.method << ',' << r.n << ',' << r.s << ',' << r.d << ',' << r.k << ',' << r.repetitions << ','
           << r.median_ms << ',' << r.ratio_vs_baseline << ',' << r.threads << ',' << r.seed << '\n';
    }
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// One untimed warm-up call, then `reps` timed calls; returns the median in milliseconds.
inline double time_median_ms(std::size_t reps, const std::function<void()>& fn) {
    fn();
    std::vector<double> ms;
    for (std::size_t r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return median(std::move(ms));
}

template <typename T>
DenseMatrix<T> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, const std::string& name) {
    auto rng = named_rng(seed, name);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    DenseMatrix<T> m(rows, cols);
    for (auto& v : m.values()) {
        v = static_cast<T>(dist(rng));
    }
    return m;
}

struct SamplingBench {
    BenchReport fps;
    BenchReport sds;
    bool deterministic = true; // every repetition selected the same indices
    std::vector<std::size_t> fps_indices;
    std::vector<std::size_t> sds_indices;
};

/// FPS over random coordinates against density-peaks sampling over random D-wide features.
template <typename T = float>
SamplingBench bench_sampling(std::size_t n, std::size_t s, std::size_t d, std::size_t k, std::size_t reps,
                             std::uint64_t seed, unsigned threads = 1) {
    reps = std::max(reps, min_bench_reps);
    const auto coords = random_matrix<T>(n, 3, seed, "bench/coords");
    const auto feats = random_matrix<T>(n, d, seed, "bench/features");

    SamplingBench out;
    out.fps_indices = fps_sample(coords, s).indices;
    out.sds_indices = sds_sample(feats, s, k, threads).first.indices;
    const double fps_ms = time_median_ms(reps, [&] {
        out.deterministic = out.deterministic && fps_sample(coords, s).indices == out.fps_indices;
    });
    const double sds_ms = time_median_ms(reps, [&] {
        out.deterministic = out.deterministic && sds_sample(feats, s, k, threads).first.indices == out.sds_indices;
    });
    out.fps = {"fps", n, s, 3, 0, reps, fps_ms, 1.0, threads, seed};
    out.sds = {"sds", n, s, d, k, reps, sds_ms, sds_ms / fps_ms, threads, seed};
    return out;
}

/// Grouping (kNN + MLP + max pool vs. cluster assignment + weighted mean) and
/// upsampling (interpolation vs. cluster gather) timings at the same sizes.
template <typename T = float>
std::vector<BenchReport> bench_blocks(std::size_t n, std::size_t s, std::size_t d, std::size_t k, std::size_t reps,
                                      std::uint64_t seed, unsigned threads = 1) {
    reps = std::max(reps, min_bench_reps);
    const auto coords = random_matrix<T>(n, 3, seed, "bench/coords");
    const auto feats = random_matrix<T>(n, d, seed, "bench/features");
    const auto scores = random_matrix<T>(n, 1, seed, "bench/scores");
    const auto samples = sds_sample(feats, s, k, threads).first;
    const auto coarse = random_matrix<T>(s, d, seed, "bench/coarse");
    const auto coarse_coords = gather_rows(coords, std::span<const std::size_t>(samples.indices));

    ParamStore<T> store(seed);
    const auto pool = register_knn_pool(store, "bench.pool", d);
    ClusterMap map = sdc_assign(feats, samples);

    std::vector<BenchReport> rows;
    const double knn_ms = time_median_ms(reps, [&] { (void)knn_pool_baseline(feats, coords, samples, pool, k); });
    const double sdc_ms = time_median_ms(reps, [&] {
        auto m = sdc_assign(feats, samples);
        (void)weighted_aggregate(feats, m, scores);
    });
    rows.push_back({"knn_group", n, s, d, k, reps, knn_ms, 1.0, threads, seed});
    rows.push_back({"sdc_group", n, s, d, 0, reps, sdc_ms, sdc_ms / knn_ms, threads, seed});

    const double idw_ms =
        time_median_ms(reps, [&] { (void)interp_upsample(coarse, coarse_coords, coords, UpsampleMode::idw3); });
    const double nn_ms =
        time_median_ms(reps, [&] { (void)interp_upsample(coarse, coarse_coords, coords, UpsampleMode::nearest); });
    const double cl_ms = time_median_ms(reps, [&] { (void)cluster_upsample(coarse, map); });
    rows.push_back({"upsample_idw3", n, s, d, 3, reps, idw_ms, 1.0, threads, seed});
    rows.push_back({"upsample_nearest", n, s, d, 1, reps, nn_ms, nn_ms / idw_ms, threads, seed});
    rows.push_back({"upsample_cluster", n, s, d, 0, reps, cl_ms, cl_ms / idw_ms, threads, seed});
    return rows;
}

} // namespace dctkit
