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

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "smoothcert/matrix.hpp"
#include "smoothcert/rng.hpp"

namespace smoothcert {

/// Raised when a numeric quantity that must stay finite does not.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Fully connected ReLU network f(x) = W_n relu(W_{n-1} ... relu(W_1 x)).
///
/// Layers carry no separate bias. When `augmented_input` is set, the first
/// layer's last column multiplies a constant 1 appended to every raw input,
/// which is how the input bias is represented. `dims()[0]` always counts
/// that constant coordinate.
class MlpModel {
public:
    MlpModel() = default;

    explicit MlpModel(std::vector<Matrix> layers, bool augmented_input = false)
        : layers_(std::move(layers)), augmented_(augmented_input) {
        validate();
    }

    /// He-uniform initialised network over raw inputs of width `raw_dims[0]`;
    /// the bias coordinate is added on top.
    static MlpModel init(const std::vector<std::size_t>& raw_dims, std::uint64_t seed, bool augmented_input = true) {
        if (raw_dims.size() < 2) throw std::invalid_argument("MlpModel::init: need at least input and output dims");
        std::vector<std::size_t> dims = raw_dims;
        if (augmented_input) dims[0] += 1;
        auto eng = make_stream(seed, 0, Phase::init);
        std::vector<Matrix> layers;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            Matrix w(dims[i + 1], dims[i]);
            const double bound = std::sqrt(6.0 / static_cast<double>(dims[i]));
            std::uniform_real_distribution<double> ud(-bound, bound);
            for (double& v : w.data()) v = ud(eng);
            layers.push_back(std::move(w));
        }
        return MlpModel(std::move(layers), augmented_input);
    }

    std::size_t num_layers() const noexcept { return layers_.size(); }
    std::size_t input_dim() const noexcept { return layers_.front().cols(); }
    std::size_t raw_input_dim() const noexcept { return input_dim() - (augmented_ ? 1 : 0); }
    std::size_t num_classes() const noexcept { return layers_.back().rows(); }
    bool augmented_input() const noexcept { return augmented_; }

    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d{input_dim()};
        for (const auto& l : layers_) d.push_back(l.rows());
        return d;
    }

    /// Widest hidden layer; equals the output width for single-layer models.
    std::size_t hidden_width() const {
        std::size_t h = 0;
        for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = std::max(h, layers_[i].rows());
        return h ? h : num_classes();
    }

    const std::vector<Matrix>& layers() const noexcept { return layers_; }
    std::vector<Matrix>& layers() noexcept { return layers_; }
    const Matrix& layer(std::size_t i) const { return layers_.at(i); }
    Matrix& layer(std::size_t i) { return layers_.at(i); }

    /// Appends the bias coordinate to a raw input when the model expects one.
    Vector prepare_input(std::span<const double> raw) const {
        if (raw.size() != raw_input_dim()) {
            std::ostringstream os;
            os << "input has length " << raw.size() << ", model expects " << raw_input_dim();
            throw std::invalid_argument(os.str());
        }
        Vector x(raw.begin(), raw.end());
        if (augmented_) x.push_back(1.0);
        return x;
    }

    void validate() const {
        if (layers_.empty()) throw std::invalid_argument("MlpModel: no layers");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const Matrix& l = layers_[i];
            if (l.rows() == 0 || l.cols() == 0) throw std::invalid_argument("MlpModel: empty layer");
            if (i > 0 && l.cols() != layers_[i - 1].rows()) {
                std::ostringstream os;
                os << "MlpModel: layer " << i << " has " << l.cols() << " inputs but layer " << i - 1 << " has "
                   << layers_[i - 1].rows() << " outputs";
                throw std::invalid_argument(os.str());
            }
            if (!l.all_finite()) throw NumericalError("MlpModel: non-finite weight in layer " + std::to_string(i));
        }
        if (augmented_ && input_dim() < 2) throw std::invalid_argument("MlpModel: augmented input needs >= 1 raw dim");
    }

    friend bool operator==(const MlpModel&, const MlpModel&) = default;

private:
    std::vector<Matrix> layers_;
    bool augmented_ = false;
};

using Gradients = std::vector<Matrix>;

inline Gradients zero_gradients(const MlpModel& model) {
    Gradients g;
    for (const auto& l : model.layers()) g.emplace_back(l.rows(), l.cols());
    return g;
}

inline void accumulate(Gradients& into, const Gradients& g, double scale = 1.0) {
    if (into.size() != g.size()) throw std::invalid_argument("accumulate: layer count mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!into[i].same_shape(g[i])) throw std::invalid_argument("accumulate: shape mismatch");
        auto& a = into[i].data();
        const auto& b = g[i].data();
        for (std::size_t j = 0; j < a.size(); ++j) a[j] += scale * b[j];
    }
}

/// Per-layer inputs and pre-activations recorded by `forward`.
struct ForwardCache {
    std::vector<Vector> inputs;          // inputs[i] feeds layer i
    std::vector<Vector> preactivations;  // preactivations[i] = W_i * inputs[i]
};

inline double relu(double z) noexcept { return z > 0.0 ? z : 0.0; }

/// Logits for a network input (already bias-augmented if the model is).
inline Vector forward(const MlpModel& model, std::span<const double> x, ForwardCache* cache = nullptr) {
    if (x.size() != model.input_dim()) {
        std::ostringstream os;
        os << "forward: input has length " << x.size() << ", model expects " << model.input_dim();
        throw std::invalid_argument(os.str());
    }
    if (cache) {
        cache->inputs.clear();
        cache->preactivations.clear();
    }
    Vector a(x.begin(), x.end());
    const std::size_t n = model.num_layers();
    for (std::size_t i = 0; i < n; ++i) {
        Vector z = matvec(model.layer(i), a);
        if (cache) {
            cache->inputs.push_back(std::move(a));
            cache->preactivations.push_back(z);
        }
        if (i + 1 < n)
            for (double& v : z) v = relu(v);
        a = std::move(z);
    }
    return a;
}

/// Reverse-mode gradient of <upstream, f(x)> w.r.t. every weight.
/// ReLU'(0) is taken as 0.
inline Gradients backward(const MlpModel& model, const ForwardCache& cache, std::span<const double> upstream) {
    const std::size_t n = model.num_layers();
    if (cache.inputs.size() != n || cache.preactivations.size() != n)
        throw std::logic_error("backward: forward cache missing or from a different model");
    if (upstream.size() != model.num_classes()) throw std::invalid_argument("backward: upstream has wrong length");

    Gradients grads = zero_gradients(model);
    Vector delta(upstream.begin(), upstream.end());
    for (std::size_t li = n; li-- > 0;) {
        const Matrix& w = model.layer(li);
        const Vector& in = cache.inputs[li];
        if (in.size() != w.cols() || delta.size() != w.rows())
            throw std::logic_error("backward: cache shapes do not match the model");
        Matrix& g = grads[li];
        for (std::size_t r = 0; r < w.rows(); ++r) {
            const double dr = delta[r];
            if (dr == 0.0) continue;
            double* gr = g.row(r).data();
            for (std::size_t c = 0; c < w.cols(); ++c) gr[c] = dr * in[c];
        }
        if (li == 0) break;
        Vector prev(w.cols(), 0.0);
        for (std::size_t r = 0; r < w.rows(); ++r) {
            const double dr = delta[r];
            if (dr == 0.0) continue;
            const double* wr = w.row(r).data();
            for (std::size_t c = 0; c < w.cols(); ++c) prev[c] += dr * wr[c];
        }
        const Vector& z = cache.preactivations[li - 1];
        for (std::size_t c = 0; c < prev.size(); ++c)
            if (!(z[c] > 0.0)) prev[c] = 0.0;
        delta = std::move(prev);
    }
    return grads;
}

/// Batched forward pass; rows of `x` are network inputs.
struct BatchCache {
    std::vector<Matrix> inputs;
    std::vector<Matrix> preactivations;
};

inline Matrix forward_batch(const MlpModel& model, const Matrix& x, BatchCache* cache = nullptr) {
    if (x.cols() != model.input_dim()) throw std::invalid_argument("forward_batch: input width mismatch");
    if (cache) {
        cache->inputs.clear();
        cache->preactivations.clear();
    }
    Matrix a = x;
    const std::size_t n = model.num_layers();
    for (std::size_t i = 0; i < n; ++i) {
        Matrix z = matmul_nt(a, model.layer(i));
        if (cache) {
            cache->inputs.push_back(std::move(a));
            cache->preactivations.push_back(z);
        }
        if (i + 1 < n)
            for (double& v : z.data()) v = relu(v);
        a = std::move(z);
    }
    return a;
}

/// Sum over the batch of per-row gradients of <upstream_row, f(x_row)>.
inline Gradients backward_batch(const MlpModel& model, const BatchCache& cache, const Matrix& upstream) {
    const std::size_t n = model.num_layers();
    if (cache.inputs.size() != n) throw std::logic_error("backward_batch: forward cache missing");
    Gradients grads(n);
    Matrix delta = upstream;
    for (std::size_t li = n; li-- > 0;) {
        grads[li] = matmul_tn(delta, cache.inputs[li]);
        if (li == 0) break;
        Matrix prev = matmul(delta, model.layer(li));
        const Matrix& z = cache.preactivations[li - 1];
        for (std::size_t i = 0; i < prev.size(); ++i)
            if (!(z.data()[i] > 0.0)) prev.data()[i] = 0.0;
        delta = std::move(prev);
    }
    return grads;
}

struct LossAndGrad {
    double loss = 0.0;
    Vector grad;
};

/// Softmax cross-entropy with a log-sum-exp shift; grad = softmax - onehot.
inline LossAndGrad cross_entropy_loss(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size()) throw std::invalid_argument("cross_entropy_loss: label out of range");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    LossAndGrad out;
    out.grad.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out.grad[i] = std::exp(logits[i] - mx);
        sum += out.grad[i];
    }
    out.loss = std::log(sum) + mx - logits[label];
    for (double& g : out.grad) g /= sum;
    out.grad[label] -= 1.0;
    return out;
}

/// Momentum buffers, one per layer.
struct SgdState {
    Gradients velocity;
};

/// v <- momentum * v + g + weight_decay * w ;  w <- w - lr * v
inline void sgd_step(MlpModel& model, const Gradients& grads, double lr, double momentum, double weight_decay,
                     SgdState& state) {
    if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step: lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd_step: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("sgd_step: weight_decay must be >= 0");
    if (grads.size() != model.num_layers()) throw std::invalid_argument("sgd_step: gradient layer count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].same_shape(model.layer(i))) throw std::invalid_argument("sgd_step: gradient shape mismatch");
        if (!grads[i].all_finite())
            throw NumericalError("sgd_step: non-finite gradient in layer " + std::to_string(i));
    }
    if (state.velocity.empty()) state.velocity = zero_gradients(model);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& w = model.layer(i).data();
        auto& v = state.velocity[i].data();
        const auto& g = grads[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = momentum * v[j] + g[j] + weight_decay * w[j];
            w[j] -= lr * v[j];
        }
    }
}

/// Argmax prediction for a raw input (lowest index on ties).
inline std::size_t predict(const MlpModel& model, std::span<const double> raw) {
    return argmax(forward(model, model.prepare_input(raw)));
}

}  // namespace smoothcert
