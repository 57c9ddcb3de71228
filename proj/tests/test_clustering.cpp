#include "oracles.hpp"

#include <dctkit/clustering.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace dctkit;
using Mat = DenseMatrix<double>;

namespace {

SampleSet random_samples(std::size_t n, std::size_t s, std::mt19937_64& rng) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    SampleSet out{std::vector<std::size_t>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(s))};
    std::sort(out.indices.begin(), out.indices.end());
    return out;
}

} // namespace

TEST(ScoreHead, ZeroWeightsGiveBias) {
    ParamStore<double> store(1);
    auto p = register_score_head(store, "s", 4);
    p.affine.weight->value.fill(0);
    p.affine.bias->value[0] = 0.75;
    std::mt19937_64 rng(1);
    const auto scores = score_head(oracle::random(9, 4, rng), p);
    for (double a : scores.values()) {
        EXPECT_EQ(a, 0.75);
    }
}

TEST(ScoreHead, IdenticalFeaturesIdenticalScores) {
    ParamStore<double> store(2);
    auto p = register_score_head(store, "s", 3);
    const auto a = score_head(Mat(5, 3, 0.4), p);
    for (std::size_t i = 1; i < 5; ++i) {
        EXPECT_EQ(a[i], a[0]);
    }
    EXPECT_THROW((void)score_head(Mat(5, 2), p), ShapeError);
}

TEST(SdcAssign, AllSampledIsIdentity) {
    std::mt19937_64 rng(3);
    SampleSet all{{0, 1, 2, 3, 4, 5}};
    const auto map = sdc_assign(oracle::random(6, 3, rng), all);
    EXPECT_EQ(map.assignment, all.indices);
}

TEST(SdcAssign, SingleSample) {
    std::mt19937_64 rng(4);
    const auto map = sdc_assign(oracle::random(7, 2, rng), SampleSet{{3}});
    EXPECT_EQ(map.assignment, std::vector<std::size_t>(7, 0));
}

TEST(SdcAssign, EmptySamples) {
    EXPECT_THROW((void)sdc_assign(Mat(3, 2), SampleSet{}), ParameterError);
}

TEST(SdcAssign, SelfMembershipUnderDuplicateFeatures) {
    // Points 0 and 2 coincide; both are sampled and each keeps its own cluster.
    const Mat f{{0.0}, {5.0}, {0.0}, {0.1}};
    const auto map = sdc_assign(f, SampleSet{{0, 2}});
    EXPECT_EQ(map.assignment, (std::vector<std::size_t>{0, 0, 1, 0}));
    EXPECT_NO_THROW(map.validate());
}

TEST(SdcAssign, MatchesOracleAndPartitions) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const auto f = oracle::random(64, 8, rng);
        const auto samples = random_samples(64, 12, rng);
        const auto map = sdc_assign(f, samples);
        EXPECT_EQ(map.assignment, oracle::assign(f, samples.indices));
        map.validate();
    }
}

TEST(SdcAssign, PermutationEquivariant) {
    std::mt19937_64 rng(6);
    const auto f = oracle::random(40, 5, rng);
    const auto samples = random_samples(40, 8, rng);
    const auto base = sdc_assign(f, samples);

    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> inverse(40);
    for (std::size_t i = 0; i < 40; ++i) {
        inverse[perm[i]] = i;
    }
    const auto fp = gather_rows(f, std::span<const std::size_t>(perm));
    SampleSet sp;
    for (auto s : samples.indices) {
        sp.indices.push_back(inverse[s]);
    }
    std::sort(sp.indices.begin(), sp.indices.end());
    const auto moved = sdc_assign(fp, sp);
    for (std::size_t i = 0; i < 40; ++i) {
        EXPECT_EQ(sp.indices[moved.assignment[i]], inverse[samples.indices[base.assignment[perm[i]]]]);
    }
}

TEST(ClusterMap, ValidateRejectsBrokenMaps) {
    ClusterMap out_of_range{{0, 2}, {0, 5, 1}, 0};
    EXPECT_THROW(out_of_range.validate(), IntegrityError);
    ClusterMap not_self{{0, 2}, {0, 1, 0}, 0};
    EXPECT_THROW(not_self.validate(), IntegrityError);
}

TEST(WeightedAggregate, EqualScoresGiveMean) {
    const Mat f{{1, 2}, {3, 4}, {10, 0}};
    const ClusterMap map{{0, 2}, {0, 0, 1}, 0};
    const auto out = weighted_aggregate(f, map, Mat(3, 1, 0.3));
    EXPECT_NEAR(out(0, 0), 2.0, 1e-15);
    EXPECT_NEAR(out(0, 1), 3.0, 1e-15);
    EXPECT_EQ(out(1, 0), 10.0);
}

TEST(WeightedAggregate, DominantScoreSelectsPoint) {
    const Mat f{{1, 2}, {3, 4}, {5, 6}};
    const ClusterMap map{{0}, {0, 0, 0}, 0};
    const auto out = weighted_aggregate(f, map, Mat{{0}, {40}, {0}});
    EXPECT_NEAR(out(0, 0), 3.0, 1e-6);
    EXPECT_NEAR(out(0, 1), 4.0, 1e-6);
}

TEST(WeightedAggregate, MatchesUnshiftedOracle) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const auto f = oracle::random(50, 6, rng);
        const auto samples = random_samples(50, 9, rng);
        const auto map = sdc_assign(f, samples);
        const auto a = oracle::random(50, 1, rng, -3, 3);
        const auto got = weighted_aggregate(f, map, a);
        EXPECT_LE(oracle::max_rel_diff(got, oracle::weighted_aggregate(f, map.assignment, 9, a)), 1e-10);
    }
}

TEST(WeightedAggregate, ShiftInvariantAndConvex) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto f = oracle::random(30, 4, rng);
        const auto samples = random_samples(30, 5, rng);
        const auto map = sdc_assign(f, samples);
        const auto a = oracle::random(30, 1, rng, -5, 5);
        auto shifted = a;
        const auto shifts = oracle::random(5, 1, rng, -20, 20);
        for (std::size_t j = 0; j < 30; ++j) {
            shifted[j] += shifts[map.assignment[j]];
        }
        const auto out = weighted_aggregate(f, map, a);
        EXPECT_LE(max_abs_diff(out, weighted_aggregate(f, map, shifted)), 1e-10);
        for (std::size_t c = 0; c < 5; ++c) {
            for (std::size_t k = 0; k < 4; ++k) {
                double lo = 1e300;
                double hi = -1e300;
                for (std::size_t j = 0; j < 30; ++j) {
                    if (map.assignment[j] == c) {
                        lo = std::min(lo, f(j, k));
                        hi = std::max(hi, f(j, k));
                    }
                }
                EXPECT_GE(out(c, k), lo - 1e-12);
                EXPECT_LE(out(c, k), hi + 1e-12);
            }
        }
    }
}

TEST(WeightedAggregate, ShapeMismatch) {
    const ClusterMap map{{0}, {0, 0}, 0};
    EXPECT_THROW((void)weighted_aggregate(Mat(2, 2), map, Mat(3, 1)), ShapeError);
}

TEST(KnnPool, KOneIsMlpOfNearestNeighbor) {
    ParamStore<double> store(9);
    auto p = register_knn_pool(store, "pool", 3);
    std::mt19937_64 rng(9);
    const auto f = oracle::random(10, 3, rng);
    const auto coords = oracle::random(10, 3, rng);
    const SampleSet samples{{2, 7}};
    const auto out = knn_pool_baseline(f, coords, samples, p, 1);
    // with k=1 the group holds the sample itself (distance 0)
    for (std::size_t r = 0; r < 2; ++r) {
        const std::size_t s = samples.indices[r];
        for (std::size_t c = 0; c < 3; ++c) {
            double acc = p.mlp.bias->value[c];
            for (std::size_t i = 0; i < 3; ++i) {
                acc += f(s, i) * p.mlp.weight->value(i, c);
            }
            EXPECT_NEAR(out(r, c), std::max(0.0, acc), 1e-14);
        }
    }
}

TEST(KnnPool, GatherMaxOracle) {
    ParamStore<double> store(10);
    auto p = register_knn_pool(store, "pool", 4);
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        const auto f = oracle::random(30, 4, rng);
        const auto coords = oracle::random(30, 3, rng);
        const auto samples = random_samples(30, 6, rng);
        const std::size_t k = 5;
        const auto out = knn_pool_baseline(f, coords, samples, p, k);
        for (std::size_t r = 0; r < samples.size(); ++r) {
            std::vector<std::pair<double, std::size_t>> all;
            for (std::size_t j = 0; j < 30; ++j) {
                all.emplace_back(oracle::sqdist(coords, samples.indices[r], coords, j), j);
            }
            std::sort(all.begin(), all.end());
            for (std::size_t c = 0; c < 4; ++c) {
                double best = 0;
                for (std::size_t m = 0; m < k; ++m) {
                    double acc = p.mlp.bias->value[c];
                    for (std::size_t i = 0; i < 4; ++i) {
                        acc += f(all[m].second, i) * p.mlp.weight->value(i, c);
                    }
                    best = std::max(best, acc);
                }
                EXPECT_NEAR(out(r, c), best, 1e-13);
            }
        }
    }
}

TEST(KnnPool, IdenticalFeaturesIdenticalOutputs) {
    ParamStore<double> store(11);
    auto p = register_knn_pool(store, "pool", 2);
    std::mt19937_64 rng(11);
    const auto out = knn_pool_baseline(Mat(12, 2, 0.3), oracle::random(12, 3, rng), SampleSet{{1, 4, 9}}, p, 4);
    EXPECT_EQ(out.row(0)[0], out.row(2)[0]);
    EXPECT_EQ(out.row(1)[1], out.row(2)[1]);
    EXPECT_THROW((void)knn_pool_baseline(Mat(12, 2), Mat(12, 3), SampleSet{{0}}, p, 12), ParameterError);
}
