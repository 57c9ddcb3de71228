#include "oracles.hpp"

#include <dctkit/checkpoint.hpp>
#include <dctkit/gradcheck.hpp>
#include <dctkit/layers.hpp>
#include <dctkit/matrix.hpp>
#include <dctkit/params.hpp>
#include <dctkit/tape.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

using namespace dctkit;
using Mat = DenseMatrix<double>;

namespace {

std::mt19937_64 rng_for(std::uint64_t seed) { return std::mt19937_64(seed); }

} // namespace

TEST(Matmul, IdentityAndProjector) {
    const Mat a{{1, 2}, {3, 4}};
    EXPECT_EQ(matmul(Mat::identity(2), a), a);
    const Mat p{{1, 0}, {0, 0}};
    EXPECT_EQ(matmul(p, Mat{{5}, {7}}), (Mat{{5}, {0}}));
}

TEST(Matmul, MatchesTripleLoop) {
    auto rng = rng_for(3);
    const auto a = oracle::random(7, 5, rng);
    const auto b = oracle::random(5, 3, rng);
    EXPECT_LE(max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-12);
}

TEST(Matmul, IdentityIsBitExact) {
    auto rng = rng_for(4);
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = oracle::random(6, 9, rng, -1e4, 1e4);
        EXPECT_EQ(matmul(Mat::identity(6), x), x);
    }
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
    try {
        (void)matmul(Mat(2, 3), Mat(2, 3));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("2x3"), std::string::npos);
        EXPECT_NE(msg.find("by 2x3"), std::string::npos);
    }
}

TEST(Matmul, RejectsNaN) {
    Mat a{{1, std::numeric_limits<double>::quiet_NaN()}};
    EXPECT_THROW((void)matmul(a, Mat(2, 1)), NumericError);
}

TEST(Softmax, UniformAndStable) {
    const auto u = softmax_rows(Mat{{0, 0, 0}});
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_NEAR(u(0, j), 1.0 / 3.0, 1e-15);
    }
    const auto s = softmax_rows(Mat{{1000, 0}});
    EXPECT_NEAR(s(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(s(0, 1), 0.0, 1e-15);
    EXPECT_TRUE(all_finite(s));
}

TEST(Softmax, RowsSumToOneIncludingLargeEntries) {
    auto rng = rng_for(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = oracle::random(4, 6, rng, trial % 2 ? -1e4 : -3.0, trial % 2 ? 1e4 : 3.0);
        const auto y = softmax_rows(x);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double total = 0;
            for (double v : y.row(i)) {
                EXPECT_GE(v, 0.0);
                total += v;
            }
            EXPECT_NEAR(total, 1.0, 1e-6);
        }
    }
    auto yf = softmax_rows(DenseMatrix<float>{{1e4f, -1e4f, 3.0f}});
    EXPECT_NEAR(yf(0, 0) + yf(0, 1) + yf(0, 2), 1.0f, 1e-6f);
}

TEST(Softmax, ColumnCases) {
    EXPECT_EQ(softmax_cols(Mat{{0}, {0}}), (Mat{{0.5}, {0.5}}));
    EXPECT_EQ(softmax_cols(Mat{{7}}), (Mat{{1}}));
    auto rng = rng_for(6);
    const auto x = oracle::random(5, 4, rng, -5, 5);
    EXPECT_LE(max_abs_diff(softmax_cols(x), transpose(softmax_rows(transpose(x)))), 1e-12);
}

TEST(Softmax, RejectsNaN) {
    EXPECT_THROW((void)softmax_rows(Mat{{std::nan("")}}), NumericError);
    EXPECT_THROW((void)softmax_cols(Mat{{std::numeric_limits<double>::infinity()}}), NumericError);
}

TEST(ParamStore, DeterministicOrderAndInit) {
    ParamStore<double> a(11);
    ParamStore<double> b(11);
    a.add_uniform("w1", 4, 3, 4);
    a.add_uniform("w2", 2, 2, 2);
    b.add_uniform("w2", 2, 2, 2);
    b.add_uniform("w1", 4, 3, 4);
    EXPECT_EQ(a.at("w1").value, b.at("w1").value);
    EXPECT_EQ(a.begin()->name, "w1");
    for (double v : a.at("w1").value.values()) {
        EXPECT_LE(std::abs(v), 0.5);
    }
    EXPECT_THROW(a.add_uniform("w1", 1, 1, 1), ParameterError);
    EXPECT_THROW((void)a.at("missing"), ParameterError);
    EXPECT_EQ(a.at("w1").grad.rows(), 4u);
}

TEST(Lbr, ZeroWeightsGiveZeroOutput) {
    ParamStore<double> store;
    auto p = register_lbr(store, "l", 3, 4);
    p.linear.weight->value.fill(0);
    p.linear.bias->value.fill(0);
    auto rng = rng_for(7);
    const auto y = lbr_forward(oracle::random(10, 3, rng), p, Mode::train);
    for (double v : y.values()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Lbr, SingleRowInferenceUsesRunningStats) {
    ParamStore<double> store(1);
    auto p = register_lbr(store, "l", 3, 4);
    const Mat x{{0.3, -0.2, 0.9}};
    const auto y = lbr_forward(x, p, Mode::eval);
    EXPECT_TRUE(all_finite(y));
    // running mean 0, var 1: normalization is division by sqrt(1 + eps)
    const auto lin = oracle::matmul(x, p.linear.weight->value);
    for (std::size_t j = 0; j < 4; ++j) {
        const double expect = std::max(0.0, (lin(0, j) + p.linear.bias->value[j]) / std::sqrt(1.0 + 1e-5));
        EXPECT_NEAR(y(0, j), expect, 1e-15);
    }
    EXPECT_EQ(lbr_forward(x, p, Mode::eval), y);
}

TEST(Lbr, TrainingNormalizationMeansEqualShift) {
    ParamStore<double> store(2);
    auto p = register_lbr(store, "l", 5, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        p.norm.scale->value[j] = 0.5;
        p.norm.shift->value[j] = 5.0 + static_cast<double>(j);
    }
    auto rng = rng_for(8);
    const auto x = oracle::random(16, 5, rng);
    const auto y = lbr_forward(x, p, Mode::train);
    for (std::size_t j = 0; j < 3; ++j) {
        double mean = 0;
        for (std::size_t i = 0; i < 16; ++i) {
            mean += y(i, j);
        }
        EXPECT_NEAR(mean / 16.0, p.norm.shift->value[j], 1e-6);
    }
}

TEST(Lbr, RunningStatisticsUseMomentum) {
    ParamStore<double> store(3);
    auto p = register_lbr(store, "l", 2, 2);
    auto rng = rng_for(9);
    const auto x = oracle::random(8, 2, rng);
    const auto lin = oracle::matmul(x, p.linear.weight->value);
    (void)lbr_forward(x, p, Mode::train);
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = 0;
        for (std::size_t i = 0; i < 8; ++i) {
            mean += lin(i, j) + p.linear.bias->value[j];
        }
        mean /= 8;
        EXPECT_NEAR(p.norm.running_mean->value[j], 0.1 * mean, 1e-12);
    }
}

TEST(Lbr, WidthMismatchIsShapeError) {
    ParamStore<double> store;
    auto p = register_lbr(store, "l", 3, 4);
    EXPECT_THROW((void)lbr_forward(Mat(2, 5), p, Mode::train), ShapeError);
}

TEST(Backward, LinearSumMatchesOuterProduct) {
    ParamStore<double> store(4);
    auto& w = store.add_uniform("w", 3, 2, 3);
    auto rng = rng_for(10);
    const auto x = oracle::random(5, 3, rng);
    Tape<double> t;
    Var loss = ag::sum(t, ag::matmul(t, t.constant(x), t.param(w)));
    t.backward(loss);
    // d/dW sum(xW) = x^T 1
    for (std::size_t i = 0; i < 3; ++i) {
        double col = 0;
        for (std::size_t r = 0; r < 5; ++r) {
            col += x(r, i);
        }
        for (std::size_t j = 0; j < 2; ++j) {
            EXPECT_NEAR(w.grad(i, j), col, 1e-14);
        }
    }
}

TEST(Backward, SoftmaxCrossEntropyGradient) {
    ParamStore<double> store;
    auto rng = rng_for(11);
    auto& z = store.add("z", oracle::random(4, 3, rng, -2, 2));
    const std::vector<int> labels{0, 2, 1, 2};
    Tape<double> t;
    t.backward(ag::cross_entropy(t, t.param(z), labels));
    const auto p = softmax_rows(z.value);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            const double onehot = static_cast<int>(j) == labels[i] ? 1.0 : 0.0;
            EXPECT_NEAR(z.grad(i, j), (p(i, j) - onehot) / 4.0, 1e-15);
        }
    }
}

TEST(Backward, AccumulatesAcrossCalls) {
    ParamStore<double> store;
    auto& w = store.add("w", Mat{{2.0}});
    Tape<double> t;
    Var loss = ag::sum(t, ag::scale(t, t.param(w), 3.0));
    t.backward(loss);
    t.backward(loss);
    EXPECT_DOUBLE_EQ(w.grad[0], 6.0);
    store.zero_grad();
    EXPECT_EQ(w.grad[0], 0.0);
}

TEST(Backward, BeforeForwardIsStateError) {
    Tape<double> t;
    EXPECT_THROW(t.backward(Var{}), StateError);
    Var v = t.constant(Mat(2, 2));
    EXPECT_THROW(t.backward(v), StateError);
}

TEST(Backward, SumOfLossesDistributes) {
    auto rng = rng_for(12);
    for (int trial = 0; trial < 10; ++trial) {
        ParamStore<double> store(static_cast<std::uint64_t>(trial));
        auto& w = store.add_uniform("w", 3, 3, 3);
        const auto x = oracle::random(4, 3, rng);
        auto branch_a = [&](Tape<double>& t) {
            return ag::sum(t, ag::softmax_rows(t, ag::matmul(t, t.constant(x), t.param(w))));
        };
        auto branch_b = [&](Tape<double>& t) {
            return ag::sum(t, ag::relu(t, ag::matmul(t, t.param(w), ag::transpose(t, t.constant(x)))));
        };
        Tape<double> ta;
        ta.backward(branch_a(ta));
        const Mat ga = w.grad;
        store.zero_grad();
        Tape<double> tb;
        tb.backward(branch_b(tb));
        const Mat gb = w.grad;
        store.zero_grad();
        Tape<double> tc;
        tc.backward(ag::add(tc, branch_a(tc), branch_b(tc)));
        for (std::size_t i = 0; i < w.grad.size(); ++i) {
            EXPECT_NEAR(w.grad[i], ga[i] + gb[i], 1e-13);
        }
    }
}

TEST(Backward, LbrAndSoftmaxMatchFiniteDifferences) {
    ParamStore<double> store(13);
    auto lbr_p = register_lbr(store, "l", 4, 5);
    auto rng = rng_for(14);
    const auto x = oracle::random(9, 4, rng);
    auto report = gradcheck(store, [&](Tape<double>& t) {
        Var h = ag::lbr(t, t.constant(x), lbr_p, Mode::train);
        return ag::sum(t, ag::softmax_cols(t, ag::softmax_rows(t, h)));
    });
    EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Gradcheck, LinearOnlyNetIsTight) {
    ParamStore<double> store(15);
    auto l1 = register_linear(store, "a", 3, 4);
    auto l2 = register_linear(store, "b", 4, 2);
    auto rng = rng_for(16);
    const auto x = oracle::random(6, 3, rng);
    auto report = gradcheck(store, [&](Tape<double>& t) {
        return ag::sum(t, ag::linear(t, ag::linear(t, t.constant(x), l1), l2));
    });
    EXPECT_TRUE(report.passed);
    EXPECT_LT(report.max_rel_error, 1e-8);
}

namespace {

// scale op whose backward is off by a factor of two
Var broken_scale(Tape<double>& t, Var a, double s) {
    auto out = t.value(a);
    for (auto& v : out.values()) {
        v *= s;
    }
    return t.push(std::move(out), {a}, [a, s](Tape<double>& tp, std::size_t self) {
        for (std::size_t i = 0; i < tp.grad(self).size(); ++i) {
            tp.grad(a)[i] += 2.0 * s * tp.grad(self)[i];
        }
    }, "broken_scale");
}

} // namespace

TEST(Gradcheck, DetectsCorruptedBackward) {
    ParamStore<double> store(17);
    auto& w = store.add_uniform("w", 2, 2, 2);
    auto report = gradcheck(store, [&](Tape<double>& t) { return ag::sum(t, broken_scale(t, t.param(w), 3.0)); });
    EXPECT_FALSE(report.passed);
    ASSERT_EQ(report.params.size(), 1u);
    EXPECT_EQ(report.params[0].name, "w");
    EXPECT_FALSE(report.params[0].passed);
}

TEST(Checkpoint, RoundTripAndVersionCheck) {
    ParamStore<double> a(21);
    register_lbr(a, "x", 3, 2);
    std::stringstream ss;
    save_checkpoint(a, ss);
    EXPECT_EQ(ss.str().rfind("DCTKIT v1\n", 0), 0u);

    ParamStore<double> b(99);
    register_lbr(b, "x", 3, 2);
    load_checkpoint(b, ss);
    for (const auto& p : a) {
        EXPECT_EQ(p.value, b.at(p.name).value) << p.name;
    }

    std::stringstream bad("DCTKIT v2\n");
    EXPECT_THROW(load_checkpoint(b, bad), ParseError);
    std::stringstream unknown("DCTKIT v1\nnope 1 1\n0\n");
    EXPECT_THROW(load_checkpoint(b, unknown), ParseError);
}

TEST(Checkpoint, FloatValuesRoundTripExactly) {
    ParamStore<float> a(5);
    a.add_uniform("w", 4, 4, 4);
    std::stringstream ss;
    save_checkpoint(a, ss);
    ParamStore<float> b(6);
    b.add_uniform("w", 4, 4, 4);
    load_checkpoint(b, ss);
    EXPECT_EQ(a.at("w").value, b.at("w").value);
}

TEST(Checkpoint, ReportsLineOfBadValue) {
    ParamStore<double> a;
    a.add_constant("w", 1, 2, 0.0);
    std::stringstream ss("DCTKIT v1\nw 1 2\n1.0 abc\n");
    try {
        load_checkpoint(a, ss);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}
