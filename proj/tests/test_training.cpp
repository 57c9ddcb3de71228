#include <dctkit/training.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace dctkit;

TEST(Adam, FirstStepMatchesClosedForm) {
    ParamStore<double> store;
    auto& w = store.add("w", DenseMatrix<double>{{1.0, -2.0}});
    w.grad = DenseMatrix<double>{{0.5, -0.25}};
    Adam<double> adam;
    adam.step(store, 1e-3);
    // bias-corrected first step moves each entry by lr * sign(g + wd * w)
    EXPECT_NEAR(w.value[0], 1.0 - 1e-3, 1e-9);
    EXPECT_NEAR(w.value[1], -2.0 + 1e-3, 1e-9);
}

TEST(Adam, WeightDecayActsWithoutGradient) {
    ParamStore<double> store;
    auto& w = store.add("w", DenseMatrix<double>{{3.0}});
    Adam<double> adam;
    adam.step(store, 0.1);
    EXPECT_LT(w.value[0], 3.0);
}

TEST(Adam, SkipsBuffers) {
    ParamStore<double> store;
    auto& b = store.add_constant("running", 1, 1, 2.0, false);
    b.grad[0] = 1.0;
    Adam<double> adam;
    adam.step(store, 1.0);
    EXPECT_EQ(b.value[0], 2.0);
}

TEST(Train, ZeroLearningRateLeavesParametersBitIdentical) {
    TrainOptions opt;
    opt.epochs = 3;
    opt.adam.lr = 0.0;
    DatasetSpec spec{"plane+sphere", 64, 1};
    auto cfg = toy_config();
    cfg.num_classes = 2;
    Network<float> reference(cfg, child_seed(5, "params"));
    auto run = train_toy<float>(spec, cfg, opt, 5);
    auto it = reference.params().begin();
    for (const auto& p : run.net.params()) {
        if (p.trainable) {
            EXPECT_EQ(p.value, it->value) << p.name;
        }
        ++it;
    }
}

TEST(Train, DeterministicUnderFixedSeed) {
    TrainOptions opt;
    opt.epochs = 4;
    DatasetSpec spec{"two-gaussians", 48, 2};
    auto a = train_toy<float>(spec, toy_config(), opt, 11);
    auto b = train_toy<float>(spec, toy_config(), opt, 11);
    ASSERT_EQ(a.history.size(), 4u);
    for (std::size_t e = 0; e < 4; ++e) {
        EXPECT_EQ(a.history[e].loss, b.history[e].loss);
        EXPECT_EQ(a.history[e].accuracy, b.history[e].accuracy);
    }
}

TEST(Train, CosineScheduleDecays) {
    TrainOptions opt;
    opt.epochs = 4;
    opt.cosine = true;
    auto run = train_toy<float>(DatasetSpec{"plane+sphere", 32, 1}, toy_config(), opt, 3);
    EXPECT_DOUBLE_EQ(run.history[0].lr, 1e-3);
    for (std::size_t e = 1; e < 4; ++e) {
        EXPECT_LT(run.history[e].lr, run.history[e - 1].lr);
    }
}

TEST(Train, EarlyLossMostlyDecreases) {
    int good = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TrainOptions opt;
        opt.epochs = 5;
        auto run = train_toy<float>(DatasetSpec{"plane+sphere", 256, 1}, toy_config(), opt, seed);
        bool monotone = true;
        for (std::size_t e = 1; e < run.history.size(); ++e) {
            monotone = monotone && run.history[e].loss <= run.history[e - 1].loss;
        }
        good += monotone;
    }
    EXPECT_GE(good, 8);
}

TEST(Train, PlaneVersusSphereSeparates) {
    const auto run = train_toy<float>(DatasetSpec{"plane+sphere", 256, 1}, toy_config(), TrainOptions{}, 7);
    ASSERT_EQ(run.history.size(), 200u);
    EXPECT_GE(run.history.back().accuracy, 0.99);
}

TEST(Train, RecalibratedStatisticsMatchBatchStatistics) {
    NetConfig cfg = toy_config();
    Network<double> net(cfg, 4);
    const auto cloud = gen_synthetic<double>("plane+sphere", 128, 4);
    EXPECT_GT(max_abs_diff(net.predict(cloud, Mode::eval).logits, net.predict(cloud, Mode::train).logits), 1e-3);
    recalibrate_statistics(net, std::vector<PointCloud<double>>{cloud});
    EXPECT_LE(max_abs_diff(net.predict(cloud, Mode::eval).logits, net.predict(cloud, Mode::train).logits), 1e-9);
}

TEST(Train, EvalModeAgreesAfterTraining) {
    TrainOptions opt;
    opt.epochs = 30;
    auto run = train_toy<float>(DatasetSpec{"plane+sphere", 256, 1}, toy_config(), opt, 2);
    const auto& cloud = run.data[0];
    const auto pred = run.net.predict(cloud, Mode::eval).predicted;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        correct += pred[i] == (*cloud.labels)[i];
    }
    EXPECT_GE(static_cast<double>(correct) / static_cast<double>(pred.size()), 0.99);
}

TEST(Train, DivergenceReportsHistory) {
    TrainOptions opt;
    opt.epochs = 50;
    opt.adam.lr = 1e38;
    try {
        (void)train_toy<float>(DatasetSpec{"plane+sphere", 32, 1}, toy_config(), opt, 1);
        FAIL() << "expected divergence";
    } catch (const TrainingDiverged& e) {
        EXPECT_LT(e.history().size(), 50u);
    }
}

TEST(Train, MetricsCsvHasHeaderAndTrailingNewline) {
    std::ostringstream os;
    write_metrics_csv({{1, 0.5, 0.75, 1e-3}}, os);
    EXPECT_EQ(os.str().rfind("epoch,loss,accuracy,lr\n", 0), 0u);
    EXPECT_EQ(os.str().back(), '\n');
}

TEST(Ablations, TableVariantsAndFullMatrix) {
    const auto variants = table_variants();
    ASSERT_EQ(variants.size(), 8u);
    EXPECT_EQ(variants.back().name, "full");
    EXPECT_TRUE(variants[0].ablation.use_fps);
    EXPECT_EQ(all_ablations().size(), 96u);
    EXPECT_EQ(describe(Ablation{}), "up=cluster");
}
