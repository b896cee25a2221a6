// Copyright 2026 The smoothcert Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "smoothcert/spectral.hpp"
#include "smoothcert/train.hpp"
#include "test_util.hpp"

using namespace smoothcert;

namespace {

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.lr = 0.05;
    cfg.lr_drops = {{2, 10.0}};
    cfg.alpha = 0.1;
    cfg.noise_variance = 0.05;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST(TrainConfig, DefaultsFollowRecipe) {
    const TrainConfig c;
    EXPECT_EQ(c.epochs, 30u);
    EXPECT_EQ(c.batch_size, 256u);
    EXPECT_DOUBLE_EQ(c.lr, 0.1);
    EXPECT_DOUBLE_EQ(c.momentum, 0.9);
    EXPECT_DOUBLE_EQ(c.noise_variance, 0.12);
    EXPECT_DOUBLE_EQ(c.lr_at(0), 0.1);
    EXPECT_DOUBLE_EQ(c.lr_at(10), 0.01);
    EXPECT_NEAR(c.lr_at(25), 0.001, 1e-18);
    TrainConfig bad;
    bad.epochs = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = {};
    bad.alpha = -1;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Train, PlainSgdLearnsSeparableSet) {
    const Dataset ds = synth_blobs(2, 3, 200, 0.05, 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 10;
    cfg.lr = 0.05;
    cfg.lr_drops = {};
    cfg.alpha = 0.0;
    cfg.noise_variance = 0.0;
    cfg.momentum = 0.0;
    MlpModel m = MlpModel::init({3, 8, 2}, 5);
    Trainer t(m, ds, cfg);
    const double loss0 = [&] {
        double s = 0;
        for (std::size_t i = 0; i < ds.size(); ++i) s += cross_entropy_loss(forward(m, m.prepare_input(ds.input(i))), ds.labels[i]).loss;
        return s / ds.size();
    }();
    const auto em = t.run_epoch();
    double loss1 = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        loss1 += cross_entropy_loss(forward(t.model(), t.model().prepare_input(ds.input(i))), ds.labels[i]).loss;
    loss1 /= ds.size();
    EXPECT_LT(loss1, loss0);
    EXPECT_EQ(em.epoch, 1u);
    EXPECT_GT(plain_accuracy(t.model(), ds), 0.9);
}

TEST(Train, BitExactReproducibility) {
    const Dataset ds = synth_blobs(3, 4, 120, 0.1, 2);
    const auto a = train(MlpModel::init({4, 8, 8, 3}, 1), ds, small_config());
    const auto b = train(MlpModel::init({4, 8, 8, 3}, 1), ds, small_config());
    EXPECT_EQ(a.model, b.model);
    ASSERT_EQ(a.metrics.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(a.metrics[i].loss, b.metrics[i].loss);
        EXPECT_EQ(a.metrics[i].reg_value, b.metrics[i].reg_value);
    }
    TrainConfig other = small_config();
    other.seed = 12;
    EXPECT_NE(train(MlpModel::init({4, 8, 8, 3}, 1), ds, other).model, a.model);
}

TEST(Train, LoggedRegularizerMatchesCheckpoint) {
    const Dataset ds = synth_blobs(3, 4, 120, 0.1, 2);
    std::vector<MlpModel> snapshots;
    const auto res = train(MlpModel::init({4, 8, 8, 3}, 1), ds, small_config(),
                           [&](const EpochMetrics&, const MlpModel& m) { snapshots.push_back(m); });
    ASSERT_EQ(snapshots.size(), res.metrics.size());
    for (std::size_t e = 0; e < snapshots.size(); ++e)
        EXPECT_DOUBLE_EQ(res.metrics[e].reg_value, l11_norm(correlation_matrix(snapshots[e])));
    EXPECT_EQ(snapshots.back(), res.model);
}

TEST(Train, RegularizerLowersCorrelation) {
    const Dataset ds = synth_blobs(3, 4, 64, 0.1, 2);
    TrainConfig cfg = small_config();
    cfg.epochs = 20;
    cfg.lr_drops = {};
    cfg.alpha = 0.0;
    const auto base = train(MlpModel::init({4, 8, 3}, 3), ds, cfg);
    cfg.alpha = 1.0;
    const auto reg = train(MlpModel::init({4, 8, 3}, 3), ds, cfg);
    EXPECT_LT(reg.metrics.back().reg_value, base.metrics.back().reg_value - 1.0);
}

TEST(Train, DivergenceRestoresEpochStart) {
    const Dataset ds = synth_blobs(3, 4, 64, 0.1, 2);
    TrainConfig cfg = small_config();
    cfg.lr = 1e200;
    cfg.momentum = 0.0;
    Trainer t(MlpModel::init({4, 8, 3}, 3), ds, cfg);
    const MlpModel start = t.model();
    EXPECT_THROW(t.run_epoch(), TrainingDiverged);
    EXPECT_EQ(t.model(), start);
    EXPECT_EQ(t.epochs_done(), 0u);
}

TEST(Train, RejectsMismatchedData) {
    const Dataset ds = synth_blobs(3, 4, 30, 0.1, 2);
    EXPECT_THROW(Trainer(MlpModel::init({5, 8, 3}, 1), ds, small_config()), std::invalid_argument);
    EXPECT_THROW(Trainer(MlpModel::init({4, 8, 2}, 1), ds, small_config()), std::invalid_argument);
}

TEST(Evaluate, PerfectMemorizerAndZeroNoise) {
    // spread 0: every point sits on its center; a trained net separates them
    const Dataset ds = synth_blobs(3, 5, 90, 0.0, 8);
    TrainConfig cfg = small_config();
    cfg.epochs = 30;
    cfg.lr_drops = {};
    cfg.alpha = 0.0;
    cfg.noise_variance = 0.0;
    const auto res = train(MlpModel::init({5, 16, 3}, 2), ds, cfg);
    EXPECT_EQ(evaluate(res.model, ds, std::nullopt), 1.0);
    EXPECT_EQ(evaluate(res.model, ds, NoiseConfig::isotropic(0.0, 4), 3), evaluate(res.model, ds, std::nullopt));
}

TEST(Evaluate, VoteCountShrinksVariance) {
    const Dataset ds = synth_blobs(3, 2, 60, 0.35, 9);
    const auto res = train(MlpModel::init({2, 16, 3}, 2), ds, small_config());
    auto variance = [&](std::uint64_t num) {
        std::vector<double> acc;
        for (std::uint64_t s = 0; s < 30; ++s) {
            NoiseConfig nc = NoiseConfig::isotropic(0.3, s);
            nc.sigma_weight = 0.0;
            acc.push_back(evaluate(res.model, ds, nc, num));
        }
        double m = 0, v = 0;
        for (double a : acc) m += a / acc.size();
        for (double a : acc) v += (a - m) * (a - m) / (acc.size() - 1);
        return v;
    };
    EXPECT_GT(variance(1), 4 * variance(1000));
}
