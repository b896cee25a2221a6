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

// Smoothed majority-vote classifier over joint weight noise u and input
// noise v: Monte-Carlo vote sampling, the Clopper-Pearson lower confidence
// bound, CERTIFY, margin-loss estimation and certified-accuracy curves.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "smoothcert/bounds.hpp"
#include "smoothcert/dataset.hpp"
#include "smoothcert/matrix.hpp"
#include "smoothcert/mlp.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/special.hpp"

namespace smoothcert {

/// How the weight perturbation u is realised for each vote.
enum class WeightNoiseMode {
    /// Samples (W + U) a layer by layer as W a + sigma_u ||a|| g, and the
    /// input noise through its projection onto the span of the first layer's
    /// rows and x. Same distribution of logits as fresh full draws.
    reparameterized,
    /// Draws every entry of U and v for every vote. Reference path.
    explicit_weights,
    /// Reuses M pre-drawn weight perturbations, picked with replacement per
    /// vote. An approximation; off unless requested.
    cached,
};

/// M perturbed copies w + u_i shared across samples.
struct WeightNoiseCache {
    std::vector<MlpModel> perturbed;
};

inline std::shared_ptr<const WeightNoiseCache> make_weight_noise_cache(const MlpModel& model, double sigma_weight,
                                                                       std::size_t count, std::uint64_t seed) {
    if (count == 0) throw std::invalid_argument("weight noise cache needs at least one entry");
    auto cache = std::make_shared<WeightNoiseCache>();
    for (std::size_t i = 0; i < count; ++i) {
        auto eng = make_stream(seed, i, Phase::weight_cache);
        MlpModel m = model;
        for (auto& l : m.layers()) {
            Vector noise(l.size());
            fill_gaussian(eng, noise, sigma_weight);
            for (std::size_t j = 0; j < noise.size(); ++j) l.data()[j] += noise[j];
        }
        cache->perturbed.push_back(std::move(m));
    }
    return cache;
}

struct NoiseConfig {
    double sigma_input = 0.0;   // std of v
    double sigma_weight = 0.0;  // std of u
    std::uint64_t base_seed = 0;
    WeightNoiseMode mode = WeightNoiseMode::reparameterized;
    std::shared_ptr<const WeightNoiseCache> cache;  // required for WeightNoiseMode::cached

    /// Same standard deviation for weights and inputs.
    static NoiseConfig isotropic(double sigma, std::uint64_t seed = 0) {
        NoiseConfig c;
        c.sigma_input = sigma;
        c.sigma_weight = sigma;
        c.base_seed = seed;
        return c;
    }

    void validate() const {
        if (!(sigma_input >= 0.0) || !std::isfinite(sigma_input))
            throw std::invalid_argument("NoiseConfig: sigma_input must be finite and >= 0");
        if (!(sigma_weight >= 0.0) || !std::isfinite(sigma_weight))
            throw std::invalid_argument("NoiseConfig: sigma_weight must be finite and >= 0");
        if (mode == WeightNoiseMode::cached && (!cache || cache->perturbed.empty()))
            throw std::invalid_argument("NoiseConfig: cached mode needs a weight noise cache");
    }
};

struct VoteCounts {
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;

    std::size_t top() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < counts.size(); ++i)
            if (counts[i] > counts[best]) best = i;
        return best;
    }
};

/// Draws noisy logits f_{w+u}(x+v) for one fixed input.
class NoisyEvaluator {
public:
    static constexpr std::size_t kChunk = 256;

    /// `raw_x` excludes the bias coordinate; v perturbs every coordinate of
    /// the network input, the constant one included.
    NoisyEvaluator(const MlpModel& model, std::span<const double> raw_x, NoiseConfig noise)
        : model_(model), noise_(std::move(noise)), x_(model.prepare_input(raw_x)) {
        noise_.validate();
        if (noise_.mode == WeightNoiseMode::reparameterized) prepare_projection();
    }

    std::size_t num_classes() const noexcept { return model_.num_classes(); }

    /// `count` rows of noisy logits.
    template <class Engine>
    Matrix draw(Engine& eng, std::size_t count) {
        switch (noise_.mode) {
            case WeightNoiseMode::reparameterized:
                return draw_reparameterized(eng, count);
            case WeightNoiseMode::explicit_weights:
                return draw_explicit(eng, count);
            case WeightNoiseMode::cached:
                return draw_cached(eng, count);
        }
        throw std::logic_error("unknown weight noise mode");
    }

    /// Calls `fn(const Matrix& logits)` on successive chunks totalling `num` draws.
    template <class Engine, class Fn>
    void for_each_chunk(Engine& eng, std::uint64_t num, Fn&& fn) {
        while (num > 0) {
            const std::size_t c = static_cast<std::size_t>(std::min<std::uint64_t>(num, kChunk));
            fn(draw(eng, c));
            num -= c;
        }
    }

private:
    // Orthonormal basis Q of span{rows of the first layer's input block, x}.
    // With s = Q v and the remainder's squared norm ~ sigma^2 chi2_{p-r},
    // (A v, x.v, |v|^2) is sampled exactly from r + 1 draws.
    void prepare_projection() {
        const Matrix& w1 = model_.layer(0);
        const std::size_t p = x_.size();
        const std::size_t h = w1.rows();
        base1_ = matvec(w1, x_);
        xx_ = dot(x_, x_);
        if (noise_.sigma_input == 0.0) {
            rank_ = 0;
            return;
        }
        std::vector<Vector> basis;
        auto try_add = [&](std::span<const double> row) {
            Vector u(row.begin(), row.end());
            const double n0 = norm2(u);
            if (n0 == 0.0) return;
            for (int pass = 0; pass < 2; ++pass)
                for (const auto& q : basis) {
                    const double c = dot(q, u);
                    for (std::size_t i = 0; i < p; ++i) u[i] -= c * q[i];
                }
            const double n1 = norm2(u);
            if (n1 <= 1e-10 * n0) return;
            for (double& v : u) v /= n1;
            basis.push_back(std::move(u));
        };
        for (std::size_t r = 0; r < h && basis.size() < p; ++r) try_add(w1.row(r));
        if (basis.size() < p) try_add(x_);
        rank_ = basis.size();
        q_ = Matrix(rank_, p);
        for (std::size_t i = 0; i < rank_; ++i) std::copy(basis[i].begin(), basis[i].end(), q_.row(i).begin());
        // C = A Q^T (h x r), cx = Q x
        c_ = Matrix(h, rank_);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t i = 0; i < rank_; ++i) c_(r, i) = dot(w1.row(r), q_.row(i));
        cx_ = matvec(q_, x_);
        chi_dof_ = p - rank_;
    }

    template <class Engine>
    Matrix draw_reparameterized(Engine& eng, std::size_t count) {
        const double su = noise_.sigma_weight, sv = noise_.sigma_input;
        const Matrix& w1 = model_.layer(0);
        const std::size_t h = w1.rows();

        Matrix z(count, h);
        Vector in_norm(count);
        Matrix s, cs;
        if (rank_ > 0) {
            s = Matrix(count, rank_);
            fill_gaussian_(eng, s.data(), sv);
            cs = matmul_nt(s, c_);
        }
        std::chi_squared_distribution<double> chi(chi_dof_ > 0 ? static_cast<double>(chi_dof_) : 1.0);
        for (std::size_t b = 0; b < count; ++b) {
            double sq = xx_;
            if (rank_ > 0) {
                auto sb = s.row(b);
                sq += 2.0 * dot(cx_, sb) + dot(sb, sb);
                for (std::size_t r = 0; r < h; ++r) z(b, r) = base1_[r] + cs(b, r);
            } else {
                for (std::size_t r = 0; r < h; ++r) z(b, r) = base1_[r];
            }
            if (su > 0.0 && sv > 0.0 && chi_dof_ > 0) sq += sv * sv * chi(eng);
            in_norm[b] = std::sqrt(std::max(0.0, sq));
        }
        add_weight_noise(eng, z, in_norm, su);

        for (std::size_t l = 1; l < model_.num_layers(); ++l) {
            for (double& v : z.data()) v = relu(v);
            Vector norms(count);
            for (std::size_t b = 0; b < count; ++b) norms[b] = norm2(z.row(b));
            Matrix next = matmul_nt(z, model_.layer(l));
            add_weight_noise(eng, next, norms, su);
            z = std::move(next);
        }
        return z;
    }

    template <class Engine>
    void add_weight_noise(Engine& eng, Matrix& z, const Vector& norms, double su) {
        if (su == 0.0) return;
        for (std::size_t b = 0; b < z.rows(); ++b) {
            const double scale = su * norms[b];
            for (double& v : z.row(b)) v += scale * nd_(eng);
        }
    }

    template <class Engine>
    Vector noisy_input(Engine& eng) {
        Vector a = x_;
        if (noise_.sigma_input > 0.0)
            for (double& v : a) v += noise_.sigma_input * nd_(eng);
        return a;
    }

    template <class Engine>
    Matrix draw_explicit(Engine& eng, std::size_t count) {
        const double su = noise_.sigma_weight;
        Matrix out(count, model_.num_classes());
        for (std::size_t b = 0; b < count; ++b) {
            Vector a = noisy_input(eng);
            const std::size_t n = model_.num_layers();
            for (std::size_t l = 0; l < n; ++l) {
                const Matrix& w = model_.layer(l);
                Vector z(w.rows());
                for (std::size_t r = 0; r < w.rows(); ++r) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < w.cols(); ++c) {
                        const double u = su > 0.0 ? su * nd_(eng) : 0.0;
                        s += (w(r, c) + u) * a[c];
                    }
                    z[r] = s;
                }
                if (l + 1 < n)
                    for (double& v : z) v = relu(v);
                a = std::move(z);
            }
            std::copy(a.begin(), a.end(), out.row(b).begin());
        }
        return out;
    }

    template <class Engine>
    Matrix draw_cached(Engine& eng, std::size_t count) {
        const auto& models = noise_.cache->perturbed;
        std::uniform_int_distribution<std::size_t> pick(0, models.size() - 1);
        Matrix out(count, model_.num_classes());
        for (std::size_t b = 0; b < count; ++b) {
            const MlpModel& m = models[pick(eng)];
            Vector a = noisy_input(eng);
            Vector logits = forward(m, a);
            std::copy(logits.begin(), logits.end(), out.row(b).begin());
        }
        return out;
    }

    template <class Engine>
    void fill_gaussian_(Engine& eng, std::vector<double>& out, double sigma) {
        for (double& v : out) v = sigma * nd_(eng);
    }

    const MlpModel& model_;
    NoiseConfig noise_;
    Vector x_;
    std::normal_distribution<double> nd_{0.0, 1.0};

    Vector base1_;
    double xx_ = 0.0;
    std::size_t rank_ = 0;
    Matrix q_;
    Matrix c_;
    Vector cx_;
    std::size_t chi_dof_ = 0;
};

/// Vote tally of argmax f_{w+u_i}(x+v_i) over `num` joint draws. `stream` is
/// a derived stream seed (see derive_seed).
inline VoteCounts sample_under_noise(const MlpModel& model, std::span<const double> x, std::uint64_t num,
                                     const NoiseConfig& noise, std::uint64_t stream) {
    if (num < 1) throw std::invalid_argument("sample_under_noise: num must be >= 1");
    NoisyEvaluator ev(model, x, noise);
    auto eng = engine_from_seed(stream);
    VoteCounts vc;
    vc.counts.assign(model.num_classes(), 0);
    ev.for_each_chunk(eng, num, [&](const Matrix& logits) {
        for (std::size_t b = 0; b < logits.rows(); ++b) ++vc.counts[argmax(logits.row(b))];
    });
    vc.total = num;
    return vc;
}

inline std::size_t majority_vote_predict(const MlpModel& model, std::span<const double> x, std::uint64_t num,
                                         const NoiseConfig& noise, std::uint64_t stream) {
    return sample_under_noise(model, x, num, noise, stream).top();
}

/// One-sided (1 - alpha) Clopper-Pearson lower bound for a binomial
/// proportion: the alpha quantile of Beta(k, n - k + 1), 0 when k = 0.
inline double lower_conf_bound(std::uint64_t k, std::uint64_t n, double conf) {
    if (n == 0 || k > n) throw std::invalid_argument("lower_conf_bound: need 0 <= k <= n and n >= 1");
    if (!(conf > 0.0 && conf < 1.0)) throw std::invalid_argument("lower_conf_bound: conf must be in (0, 1)");
    if (k == 0) return 0.0;
    const double alpha = 1.0 - conf;
    const double a = static_cast<double>(k), b = static_cast<double>(n - k + 1);
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (special::ibeta(a, b, mid) < alpha)
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

/// R = sqrt(-2 sigma^2 ln(1 - (sqrt(pA) - sqrt(pB))^2)); pA is clamped below 1.
inline double radius_formula(double pa, double pb, double sigma) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("radius_formula: sigma must be >= 0");
    return sigma * std::sqrt(2.0 * hellinger_log_term(pa, pb));
}

struct CertifyResult {
    std::optional<std::size_t> predicted;  // nullopt = ABSTAIN
    double pa_lower = 0.0;
    double radius = 0.0;
    std::uint64_t n_selection = 0;
    std::uint64_t n_estimation = 0;
    double alpha_b = 0.0;

    bool abstain() const noexcept { return !predicted.has_value(); }
    friend bool operator==(const CertifyResult&, const CertifyResult&) = default;
};

/// Guess the top class from n0 selection draws, bound its probability from
/// n fresh estimation draws, and certify if the bound exceeds 1/2 (p_B is
/// taken as 1 - p_A). Draws come from the streams of `sample_index`.
inline CertifyResult certify(const MlpModel& model, std::span<const double> x, const NoiseConfig& noise,
                             std::uint64_t n0, std::uint64_t n, double alpha_b, std::uint64_t sample_index) {
    if (n0 < 1 || n < 1) throw std::invalid_argument("certify: n0 and n must be >= 1");
    if (!(alpha_b > 0.0 && alpha_b < 1.0)) throw std::invalid_argument("certify: alpha_b must be in (0, 1)");
    const VoteCounts sel =
        sample_under_noise(model, x, n0, noise, derive_seed(noise.base_seed, sample_index, Phase::selection));
    const std::size_t guess = sel.top();
    const VoteCounts est =
        sample_under_noise(model, x, n, noise, derive_seed(noise.base_seed, sample_index, Phase::estimation));
    CertifyResult r;
    r.n_selection = n0;
    r.n_estimation = n;
    r.alpha_b = alpha_b;
    r.pa_lower = lower_conf_bound(est.counts[guess], n, 1.0 - alpha_b);
    if (r.pa_lower > 0.5) {
        r.predicted = guess;
        r.radius = radius_formula(r.pa_lower, 1.0 - r.pa_lower, noise.sigma_input);
    }
    return r;
}

struct CertifiedSample {
    std::size_t index = 0;
    std::size_t label = 0;
    CertifyResult result;

    bool correct() const noexcept { return result.predicted && *result.predicted == label; }
};

/// Runs `fn(i)` for i in [0, count) on `workers` threads.
template <class Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            try {
                for (std::size_t i; (i = next.fetch_add(1)) < count && !failed.load();) fn(i);
            } catch (...) {
                if (!failed.exchange(true)) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// Certifies ds[indices[j]] for every j. Each sample draws from its own
/// streams, keyed by its index in `ds`, so results do not depend on the
/// worker count. Output is sorted by sample index.
inline std::vector<CertifiedSample> certify_dataset(const MlpModel& model, const Dataset& ds,
                                                    std::span<const std::size_t> indices, const NoiseConfig& noise,
                                                    std::uint64_t n0, std::uint64_t n, double alpha_b,
                                                    std::size_t workers = 1) {
    std::vector<CertifiedSample> out(indices.size());
    parallel_for(indices.size(), workers, [&](std::size_t j) {
        const std::size_t i = indices[j];
        out[j] = CertifiedSample{i, ds.labels.at(i), certify(model, ds.input(i), noise, n0, n, alpha_b, i)};
    });
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    return out;
}

/// Per-class tallies of the margin-gamma vote rule for one label: the label
/// scores when it beats every other logit by more than gamma, any other class
/// scores when it comes within gamma of the best competitor.
inline std::vector<std::uint64_t> margin_votes(const Matrix& logits, std::size_t label, double gamma) {
    const std::size_t k = logits.cols();
    std::vector<std::uint64_t> votes(k, 0);
    for (std::size_t b = 0; b < logits.rows(); ++b) {
        auto o = logits.row(b);
        // top two logits give max_{j != c} for every c
        std::size_t i1 = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (o[j] > o[i1]) i1 = j;
        double second = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j)
            if (j != i1) second = std::max(second, o[j]);
        for (std::size_t c = 0; c < k; ++c) {
            const double other = (c == i1) ? second : o[i1];
            const bool win = (c == label) ? (o[c] > other + gamma) : (o[c] + gamma > other);
            if (win) ++votes[c];
        }
    }
    return votes;
}

/// Fraction of samples where the margin-gamma smoothed vote misses the label.
/// Sample i draws from stream derive_seed(stream, i, estimation), so losses
/// at different gamma share their draws.
inline double empirical_margin_loss(const MlpModel& model, const Dataset& ds, double gamma, std::uint64_t num,
                                    const NoiseConfig& noise, std::uint64_t stream) {
    if (!(gamma >= 0.0)) throw std::invalid_argument("empirical_margin_loss: gamma must be >= 0");
    if (num < 1) throw std::invalid_argument("empirical_margin_loss: num must be >= 1");
    if (ds.size() == 0) return 0.0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        NoisyEvaluator ev(model, ds.input(i), noise);
        auto eng = engine_from_seed(derive_seed(stream, i, Phase::estimation));
        std::vector<std::uint64_t> votes(model.num_classes(), 0);
        ev.for_each_chunk(eng, num, [&](const Matrix& logits) {
            const auto v = margin_votes(logits, ds.labels[i], gamma);
            for (std::size_t c = 0; c < v.size(); ++c) votes[c] += v[c];
        });
        std::size_t g = 0;
        for (std::size_t c = 1; c < votes.size(); ++c)
            if (votes[c] > votes[g]) g = c;
        if (g != ds.labels[i]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

struct CurvePoint {
    double radius = 0.0;
    double accuracy = 0.0;
};

/// accuracy(r) = fraction predicted correctly with certified radius >= r.
inline std::vector<CurvePoint> certified_accuracy_curve(std::span<const CertifiedSample> samples,
                                                        std::span<const double> radii) {
    std::vector<CurvePoint> out;
    out.reserve(radii.size());
    for (double r : radii) {
        std::size_t ok = 0;
        for (const auto& s : samples)
            if (s.correct() && s.result.radius >= r) ++ok;
        out.push_back({r, samples.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(samples.size())});
    }
    return out;
}

/// 0, step, 2 step, ... up to and including `max_radius`.
inline std::vector<double> radius_grid(double max_radius, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("radius_grid: step must be > 0");
    std::vector<double> g;
    for (std::size_t i = 0;; ++i) {
        const double r = static_cast<double>(i) * step;
        if (r > max_radius + 1e-12) break;
        g.push_back(r);
    }
    return g;
}

}  // namespace smoothcert
