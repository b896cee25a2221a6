/*
 * Copyright 2026 The smoothcert Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothcert/dataset.hpp"
#include "smoothcert/mlp.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/smoothing.hpp"
#include "smoothcert/spectral.hpp"

namespace smoothcert {

struct LrDrop {
    std::size_t epoch = 0;  // drop applies from this 0-based epoch on
    double divisor = 10.0;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 256;
    double lr = 0.1;
    std::vector<LrDrop> lr_drops{{10, 10.0}, {20, 10.0}};
    double momentum = 0.9;
    double weight_decay = 0.0;
    double alpha = 0.1;            // correlation regularizer weight
    double noise_variance = 0.12;  // sigma^2 of the training input noise
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (!(lr >= 0.0)) throw std::invalid_argument("TrainConfig: lr must be >= 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
        if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
        if (!(alpha >= 0.0)) throw std::invalid_argument("TrainConfig: alpha must be >= 0");
        if (!(noise_variance >= 0.0)) throw std::invalid_argument("TrainConfig: noise_variance must be >= 0");
        for (const auto& d : lr_drops)
            if (!(d.divisor > 0.0)) throw std::invalid_argument("TrainConfig: lr divisor must be > 0");
    }

    double lr_at(std::size_t epoch) const {
        double r = lr;
        for (const auto& d : lr_drops)
            if (epoch >= d.epoch) r /= d.divisor;
        return r;
    }
};

struct EpochMetrics {
    std::size_t epoch = 0;   // 1-based
    double loss = 0.0;       // mean cross-entropy on the noisy minibatches
    double train_acc = 0.0;  // accuracy on the same noisy minibatches
    double reg_value = 0.0;  // ||R||_{1,1} of the weights at the end of the epoch
    double seconds = 0.0;    // wall time of the epoch's update loop
};

/// Thrown when the training loss stops being finite. The trainer's model is
/// rolled back to the start of the failing epoch.
class TrainingDiverged : public NumericalError {
public:
    TrainingDiverged(const std::string& what, std::size_t epoch) : NumericalError(what), epoch_(epoch) {}
    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

/// Smooth training: cross-entropy on inputs with fresh Gaussian noise, plus
/// one regularizer gradient step of weight alpha at the first minibatch of
/// every epoch.
class Trainer {
public:
    Trainer(MlpModel model, const Dataset& data, TrainConfig cfg)
        : model_(std::move(model)), data_(data), cfg_(std::move(cfg)) {
        cfg_.validate();
        data_.validate();
        if (data_.num_classes > model_.num_classes())
            throw std::invalid_argument("Trainer: dataset has more classes than the model outputs");
        if (data_.dim() != model_.raw_input_dim())
            throw std::invalid_argument("Trainer: dataset dimension does not match the model input");
        if (data_.size() == 0) throw std::invalid_argument("Trainer: empty dataset");
    }

    const MlpModel& model() const noexcept { return model_; }
    const TrainConfig& config() const noexcept { return cfg_; }
    std::size_t epochs_done() const noexcept { return epoch_; }
    bool done() const noexcept { return epoch_ >= cfg_.epochs; }

    EpochMetrics run_epoch() {
        const MlpModel snapshot = model_;
        const SgdState velocity_snapshot = sgd_;
        const double lr = cfg_.lr_at(epoch_);
        const double sigma = std::sqrt(cfg_.noise_variance);
        const std::size_t m = data_.size();
        const std::size_t d = model_.input_dim();

        const auto t0 = std::chrono::steady_clock::now();
        auto eng = make_stream(cfg_.seed, epoch_, Phase::training);
        std::vector<std::size_t> perm(m);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), eng);
        std::normal_distribution<double> nd(0.0, 1.0);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < m; start += cfg_.batch_size) {
            if (start == 0 && cfg_.alpha > 0.0) {
                const RegularizerResult reg = regularizer_and_gradient(model_);
                for (std::size_t l = 0; l < model_.num_layers(); ++l) {
                    if (!reg.grads[l].all_finite())
                        fail(snapshot, velocity_snapshot, "non-finite regularizer gradient");
                    auto& w = model_.layer(l).data();
                    const auto& g = reg.grads[l].data();
                    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * cfg_.alpha * g[j];
                }
            }
            const std::size_t bs = std::min(cfg_.batch_size, m - start);
            Matrix x(bs, d);
            for (std::size_t b = 0; b < bs; ++b) {
                const Vector xi = model_.prepare_input(data_.input(perm[start + b]));
                auto row = x.row(b);
                for (std::size_t j = 0; j < d; ++j) row[j] = xi[j] + (sigma > 0.0 ? sigma * nd(eng) : 0.0);
            }
            BatchCache cache;
            const Matrix logits = forward_batch(model_, x, &cache);
            Matrix upstream(bs, logits.cols());
            for (std::size_t b = 0; b < bs; ++b) {
                const std::size_t y = data_.labels[perm[start + b]];
                LossAndGrad lg = cross_entropy_loss(logits.row(b), y);
                if (!std::isfinite(lg.loss)) fail(snapshot, velocity_snapshot, "non-finite training loss");
                loss_sum += lg.loss;
                if (argmax(logits.row(b)) == y) ++correct;
                for (std::size_t c = 0; c < lg.grad.size(); ++c)
                    upstream(b, c) = lg.grad[c] / static_cast<double>(bs);
            }
            const Gradients grads = backward_batch(model_, cache, upstream);
            try {
                sgd_step(model_, grads, lr, cfg_.momentum, cfg_.weight_decay, sgd_);
            } catch (const NumericalError& e) {
                fail(snapshot, velocity_snapshot, e.what());
            }
        }
        const auto t1 = std::chrono::steady_clock::now();

        EpochMetrics em;
        em.epoch = ++epoch_;
        em.loss = loss_sum / static_cast<double>(m);
        em.train_acc = static_cast<double>(correct) / static_cast<double>(m);
        em.reg_value = l11_norm(correlation_matrix(model_));
        em.seconds = std::chrono::duration<double>(t1 - t0).count();
        return em;
    }

private:
    [[noreturn]] void fail(const MlpModel& snapshot, const SgdState& velocity, const std::string& why) {
        model_ = snapshot;
        sgd_ = velocity;
        throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch_ + 1) + ": " + why, epoch_ + 1);
    }

    MlpModel model_;
    const Dataset& data_;
    TrainConfig cfg_;
    SgdState sgd_;
    std::size_t epoch_ = 0;
};

struct TrainResult {
    MlpModel model;
    std::vector<EpochMetrics> metrics;
};

/// Runs all epochs; `on_epoch` sees each epoch's metrics and weights.
inline TrainResult train(MlpModel model, const Dataset& data, const TrainConfig& cfg,
                         const std::function<void(const EpochMetrics&, const MlpModel&)>& on_epoch = {}) {
    Trainer t(std::move(model), data, cfg);
    TrainResult res;
    while (!t.done()) {
        res.metrics.push_back(t.run_epoch());
        if (on_epoch) on_epoch(res.metrics.back(), t.model());
    }
    res.model = t.model();
    return res;
}

/// Fraction of rows classified correctly by argmax f_w.
inline double plain_accuracy(const MlpModel& model, const Dataset& data) {
    if (data.size() == 0) return 0.0;
    constexpr std::size_t kBlock = 1024;
    const std::size_t d = model.input_dim();
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += kBlock) {
        const std::size_t bs = std::min(kBlock, data.size() - start);
        Matrix x(bs, d);
        for (std::size_t b = 0; b < bs; ++b) {
            const Vector xi = model.prepare_input(data.input(start + b));
            std::copy(xi.begin(), xi.end(), x.row(b).begin());
        }
        const Matrix logits = forward_batch(model, x);
        for (std::size_t b = 0; b < bs; ++b)
            if (argmax(logits.row(b)) == data.labels[start + b]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Accuracy of f_w, or of the smoothed majority vote over `num` draws when
/// noise is given (sample i uses the estimation stream of index i).
inline double evaluate(const MlpModel& model, const Dataset& data, const std::optional<NoiseConfig>& noise,
                       std::uint64_t num = 1) {
    if (!noise) return plain_accuracy(model, data);
    if (data.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t pred = majority_vote_predict(model, data.input(i), num, *noise,
                                                       derive_seed(noise->base_seed, i, Phase::estimation));
        if (pred == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace smoothcert
