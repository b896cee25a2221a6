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

// Brute-force reference computations used to check the main library. None of
// these share numeric kernels with the code they check beyond Matrix.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <nlohmann/json.hpp>
#include "smoothcert/matrix.hpp"
#include "smoothcert/mlp.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/smoothing.hpp"

namespace smoothcert::oracle {

using Real50 = boost::multiprecision::cpp_bin_float_50;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending. Sweeps until the off-diagonal Frobenius norm is below `tol`.
inline std::vector<double> jacobi_eigs(const Matrix& m, double tol = 1e-12) {
    if (m.rows() != m.cols()) throw std::invalid_argument("jacobi_eigs: matrix is not square");
    const std::size_t n = m.rows();
    double scale = 0.0;
    for (double v : m.data()) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m(i, j) - m(j, i)) > 1e-12 * std::max(1.0, scale))
                throw std::invalid_argument("jacobi_eigs: matrix is not symmetric");
    Matrix a = m;
    auto off = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) s += a(i, j) * a(i, j);
        return std::sqrt(s);
    };
    for (int sweep = 0; sweep < 100 && off() >= tol; ++sweep) {
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
    std::sort(ev.rbegin(), ev.rend());
    return ev;
}

/// P[Bin(n, p) >= k], summed term by term in 50-digit arithmetic.
inline double binomial_tail(std::uint64_t k, std::uint64_t n, double p) {
    if (n > 1000) throw std::invalid_argument("binomial_tail: exact summation is limited to n <= 1000");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("binomial_tail: p must be in [0, 1]");
    if (k == 0) return 1.0;
    if (k > n) return 0.0;
    const Real50 pp(p), qq = Real50(1) - pp;
    Real50 sum = 0;
    Real50 coef = 1;  // C(n, i)
    for (std::uint64_t i = 0; i <= n; ++i) {
        if (i > 0) coef = coef * Real50(n - i + 1) / Real50(i);
        if (i >= k) sum += coef * pow(pp, static_cast<long>(i)) * pow(qq, static_cast<long>(n - i));
    }
    return static_cast<double>(sum);
}

/// Sample Pearson correlation matrix of the linearized outputs
/// W_n ... W_1 (x + v), v ~ N(0, sigma^2 I) over every network input
/// coordinate. The product is applied layer by layer, never collapsed.
inline Matrix mc_correlation(const MlpModel& model, std::span<const double> raw_x, std::uint64_t n_samples,
                             double sigma, std::uint64_t stream) {
    if (n_samples < 2) throw std::invalid_argument("mc_correlation: need at least 2 samples");
    const Vector x = model.prepare_input(raw_x);
    const std::size_t d = x.size(), k = model.num_classes();
    auto eng = engine_from_seed(stream);
    std::normal_distribution<double> nd(0.0, 1.0);
    // shifted sums around the noiseless output keep the moments well conditioned
    Vector centre = x;
    for (const auto& w : model.layers()) {
        Vector next(w.rows(), 0.0);
        for (std::size_t r = 0; r < w.rows(); ++r)
            for (std::size_t c = 0; c < w.cols(); ++c) next[r] += w(r, c) * centre[c];
        centre = std::move(next);
    }
    std::vector<long double> s1(k, 0.0L), s2(k * k, 0.0L);
    constexpr std::size_t kBlock = 512;
    for (std::uint64_t done = 0; done < n_samples;) {
        const std::size_t bs = static_cast<std::size_t>(std::min<std::uint64_t>(kBlock, n_samples - done));
        Matrix a(bs, d);
        for (std::size_t b = 0; b < bs; ++b)
            for (std::size_t j = 0; j < d; ++j) a(b, j) = x[j] + sigma * nd(eng);
        for (const auto& w : model.layers()) a = matmul_nt(a, w);
        for (std::size_t b = 0; b < bs; ++b) {
            for (std::size_t i = 0; i < k; ++i) {
                const long double oi = a(b, i) - centre[i];
                s1[i] += oi;
                for (std::size_t j = i; j < k; ++j) s2[i * k + j] += oi * (a(b, j) - centre[j]);
            }
        }
        done += bs;
    }
    const long double n = static_cast<long double>(n_samples);
    Matrix cov(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i; j < k; ++j) {
            const long double c = (s2[i * k + j] - s1[i] * s1[j] / n) / (n - 1);
            cov(i, j) = cov(j, i) = static_cast<double>(c);
        }
    Matrix r(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double den = std::sqrt(cov(i, i) * cov(j, j));
            r(i, j) = den > 0.0 ? cov(i, j) / den : (i == j ? 1.0 : 0.0);
        }
    return r;
}

struct AttackReport {
    std::size_t sample_id = 0;
    double radius = 0.0;        // certified radius under attack
    double budget = 0.0;        // largest perturbation norm probed
    std::size_t reference = 0;  // class the vote must keep
    std::size_t probes = 0;
    std::uint64_t votes_per_probe = 0;
    std::size_t flips = 0;
    double worst_norm = 0.0;        // probe with the weakest reference vote
    double worst_vote_share = 1.0;  // reference votes / votes_per_probe at that probe
    bool worst_flipped = false;

    bool clean() const noexcept { return flips == 0; }
};

inline void to_json(nlohmann::json& j, const AttackReport& r) {
    j = nlohmann::json{{"sample_id", r.sample_id},
                       {"radius", r.radius},
                       {"budget", r.budget},
                       {"reference_class", r.reference},
                       {"probes", r.probes},
                       {"votes_per_probe", r.votes_per_probe},
                       {"flips", r.flips},
                       {"worst_perturbation", {{"norm", r.worst_norm},
                                               {"reference_vote_share", r.worst_vote_share},
                                               {"vote_flip", r.worst_flipped}}}};
}

namespace detail {
inline void probe_all(const MlpModel& model, std::span<const double> x, const std::vector<Vector>& eps,
                      const NoiseConfig& noise, std::uint64_t votes, std::uint64_t stream, std::size_t workers,
                      AttackReport& rep) {
    std::vector<std::uint64_t> ref_votes(eps.size(), 0);
    std::vector<bool> flipped(eps.size(), false);
    parallel_for(eps.size(), workers, [&](std::size_t p) {
        Vector xp(x.begin(), x.end());
        for (std::size_t j = 0; j < xp.size(); ++j) xp[j] += eps[p][j];
        const VoteCounts vc = sample_under_noise(model, xp, votes, noise, derive_seed(stream, p, Phase::probe));
        ref_votes[p] = vc.counts[rep.reference];
        flipped[p] = vc.top() != rep.reference;
    });
    rep.probes = eps.size();
    rep.votes_per_probe = votes;
    for (std::size_t p = 0; p < eps.size(); ++p) {
        if (flipped[p]) ++rep.flips;
        const double share = static_cast<double>(ref_votes[p]) / static_cast<double>(votes);
        if (share < rep.worst_vote_share || p == 0) {
            rep.worst_vote_share = share;
            rep.worst_norm = norm2(eps[p]);
            rep.worst_flipped = flipped[p];
        }
    }
}
}  // namespace detail

/// Exhaustive probe of the smoothed vote on a regular grid: `grid_density`
/// points per axis over [-b, b]^d with b = budget_scale * R, keeping those
/// with norm <= b. A flip is any probe whose majority vote differs from
/// `reference`. Statistical check: each probe uses its own stream.
inline AttackReport grid_attack(const MlpModel& model, std::span<const double> x, std::size_t reference, double radius,
                                const NoiseConfig& noise, std::size_t grid_density, std::uint64_t votes_per_probe,
                                std::uint64_t stream, double budget_scale = 0.95, std::size_t workers = 1,
                                std::size_t sample_id = 0) {
    const std::size_t d = x.size();
    if (d > 3)
        throw std::invalid_argument("grid_attack: exhaustive grids are limited to 3 input dims (got " +
                                    std::to_string(d) + "); use random_direction_attack instead");
    if (grid_density < 2) throw std::invalid_argument("grid_attack: grid_density must be >= 2");
    if (votes_per_probe < 1) throw std::invalid_argument("grid_attack: votes_per_probe must be >= 1");
    AttackReport rep;
    rep.sample_id = sample_id;
    rep.radius = radius;
    rep.reference = reference;
    rep.budget = budget_scale * radius;
    rep.votes_per_probe = votes_per_probe;
    if (!(rep.budget > 0.0)) return rep;
    std::vector<Vector> eps;
    std::vector<std::size_t> idx(d, 0);
    const double b = rep.budget;
    auto coord = [&](std::size_t i) { return -b + 2.0 * b * static_cast<double>(i) / static_cast<double>(grid_density - 1); };
    while (true) {
        Vector e(d);
        for (std::size_t j = 0; j < d; ++j) e[j] = coord(idx[j]);
        if (norm2(e) <= b * (1.0 + 1e-12)) eps.push_back(std::move(e));
        std::size_t j = 0;
        while (j < d && ++idx[j] == grid_density) idx[j++] = 0;
        if (j == d) break;
    }
    detail::probe_all(model, x, eps, noise, votes_per_probe, stream, workers, rep);
    return rep;
}

/// Probes `directions` random unit directions at `steps` evenly spaced norms
/// up to budget_scale * R. For inputs too wide for an exhaustive grid.
inline AttackReport random_direction_attack(const MlpModel& model, std::span<const double> x, std::size_t reference,
                                            double radius, const NoiseConfig& noise, std::size_t directions,
                                            std::size_t steps, std::uint64_t votes_per_probe, std::uint64_t stream,
                                            double budget_scale = 0.95, std::size_t workers = 1,
                                            std::size_t sample_id = 0) {
    if (directions < 1 || steps < 1) throw std::invalid_argument("random_direction_attack: need directions, steps >= 1");
    AttackReport rep;
    rep.sample_id = sample_id;
    rep.radius = radius;
    rep.reference = reference;
    rep.budget = budget_scale * radius;
    rep.votes_per_probe = votes_per_probe;
    if (!(rep.budget > 0.0)) return rep;
    auto eng = make_stream(stream, 0, Phase::generic);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<Vector> eps;
    for (std::size_t k = 0; k < directions; ++k) {
        Vector u(x.size());
        for (double& v : u) v = nd(eng);
        const double nu = norm2(u);
        for (std::size_t s = 1; s <= steps; ++s) {
            const double r = rep.budget * static_cast<double>(s) / static_cast<double>(steps);
            Vector e(u.size());
            for (std::size_t j = 0; j < e.size(); ++j) e[j] = u[j] / nu * r;
            eps.push_back(std::move(e));
        }
    }
    detail::probe_all(model, x, eps, noise, votes_per_probe, stream, workers, rep);
    return rep;
}

}  // namespace smoothcert::oracle
