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
#include <vector>

#include <nlohmann/json.hpp>
#include "smoothcert/matrix.hpp"
#include "smoothcert/mlp.hpp"
#include "smoothcert/rng.hpp"

namespace smoothcert {

struct PowerIterationOptions {
    double tol = 1e-10;
    std::size_t max_iters = 10000;
    std::uint64_t seed = 0;
};

struct PowerIterationResult {
    double value = 0.0;  // largest singular value
    std::size_t iterations = 0;
    bool converged = false;
};

/// Largest singular value by power iteration on m^T m.
///
/// Stops once the eigen-residual ||m^T m v - lambda v|| falls below
/// sqrt(tol) * lambda, which bounds the relative error of lambda by about
/// tol * lambda / gap. Returns the last estimate with `converged = false` if
/// `max_iters` is exhausted.
inline PowerIterationResult power_iteration(const Matrix& m, const PowerIterationOptions& opts = {}) {
    if (!(opts.tol > 0.0)) throw std::invalid_argument("power_iteration: tol must be > 0");
    PowerIterationResult res;
    if (m.empty()) return res;

    auto eng = make_stream(opts.seed, 0, Phase::generic);
    Vector v(m.cols());
    fill_gaussian(eng, v, 1.0);
    double nv = norm2(v);
    for (double& x : v) x /= nv;

    const double thresh = std::sqrt(opts.tol);
    const Matrix mt = m.transposed();
    double lambda = 0.0;
    for (std::size_t it = 1; it <= opts.max_iters; ++it) {
        Vector w = matvec(mt, matvec(m, v));
        lambda = dot(v, w);
        res.iterations = it;
        if (lambda <= 0.0) {
            // v is in the null space; for a zero matrix that is the answer
            if (frobenius_norm(m) == 0.0) {
                res.converged = true;
                return res;
            }
            fill_gaussian(eng, v, 1.0);
        } else {
            double r2 = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) r2 += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
            if (std::sqrt(r2) <= thresh * lambda) {
                res.converged = true;
                res.value = std::sqrt(lambda);
                return res;
            }
            v = std::move(w);
        }
        nv = norm2(v);
        for (double& x : v) x /= nv;
    }
    res.value = std::sqrt(std::max(lambda, 0.0));
    return res;
}

inline double spectral_norm(const Matrix& m, double tol = 1e-10, std::size_t max_iters = 10000) {
    return power_iteration(m, {tol, max_iters, 0}).value;
}

/// W = W_n ... W_1, shape k x d.
inline Matrix collapsed_weight(const MlpModel& model) {
    Matrix acc = model.layer(0);
    for (std::size_t i = 1; i < model.num_layers(); ++i) acc = matmul(model.layer(i), acc);
    return acc;
}

/// ||m m^T||_inf = max_i sum_j |<m_i, m_j>|, an upper bound on ||m||_2^2.
inline double gershgorin_bound(const Matrix& m) {
    const Matrix g = matmul_nt(m, m);
    double best = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i) {
        double s = 0.0;
        for (double v : g.row(i)) s += std::abs(v);
        best = std::max(best, s);
    }
    return best;
}

inline double l11_norm(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data()) s += std::abs(v);
    return s;
}

/// Rows with zero norm; their cosines are undefined.
struct CosineDiagnostics {
    std::vector<std::size_t> zero_rows;
    bool degenerate() const noexcept { return !zero_rows.empty(); }
};

/// Normalized Gram matrix of the rows of `w`. A zero row gets 1 on the
/// diagonal and 0 elsewhere.
inline Matrix cosine_matrix(const Matrix& w, CosineDiagnostics* diag = nullptr) {
    const Matrix g = matmul_nt(w, w);
    const std::size_t k = g.rows();
    Vector inv(k, 0.0);
    if (diag) diag->zero_rows.clear();
    for (std::size_t i = 0; i < k; ++i) {
        if (g(i, i) > 0.0) {
            inv[i] = 1.0 / std::sqrt(g(i, i));
        } else if (diag) {
            diag->zero_rows.push_back(i);
        }
    }
    Matrix c(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        c(i, i) = 1.0;
        for (std::size_t j = i + 1; j < k; ++j) c(i, j) = c(j, i) = std::clamp(g(i, j) * inv[i] * inv[j], -1.0, 1.0);
    }
    return c;
}

/// Pearson correlation matrix of the linearized network's outputs under
/// spherical Gaussian input noise, evaluated analytically: it equals the
/// cosine matrix of the collapsed weight's rows.
inline Matrix correlation_matrix(const MlpModel& model, CosineDiagnostics* diag = nullptr) {
    return cosine_matrix(collapsed_weight(model), diag);
}

struct RegularizerResult {
    double value = 0.0;
    Gradients grads;
    std::vector<std::size_t> zero_rows;
};

/// Value and exact gradient of || correlation_matrix(model) ||_{1,1}.
///
/// With G = W W^T and c_ij = G_ij / sqrt(G_ii G_jj), the derivative w.r.t. G
/// is Gbar_ij = sign(c_ij) / sqrt(G_ii G_jj) off the diagonal and
/// Gbar_ii = -sum_{j != i} |c_ij| / G_ii on it, so dV/dW = 2 Gbar W. Layer
/// gradients follow from W = L_l W_l R_l as L_l^T (dV/dW) R_l^T.
inline RegularizerResult regularizer_and_gradient(const MlpModel& model) {
    const std::size_t n = model.num_layers();

    // right partial products Q_l = W_{l-1} ... W_0 (Q_0 is the identity, never built)
    std::vector<Matrix> right(n);
    for (std::size_t l = 1; l < n; ++l) right[l] = (l == 1) ? model.layer(0) : matmul(model.layer(l - 1), right[l - 1]);
    const Matrix w = (n == 1) ? model.layer(0) : matmul(model.layer(n - 1), right[n - 1]);

    const Matrix g = matmul_nt(w, w);
    const std::size_t k = g.rows();
    RegularizerResult res;
    Vector inv(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        if (g(i, i) > 0.0)
            inv[i] = 1.0 / std::sqrt(g(i, i));
        else
            res.zero_rows.push_back(i);
    }

    Matrix gbar(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        res.value += 1.0;
        if (inv[i] == 0.0) continue;
        double diag_acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (j == i || inv[j] == 0.0) continue;
            const double c = g(i, j) * inv[i] * inv[j];
            res.value += std::abs(c);
            const double s = (c > 0.0) ? 1.0 : (c < 0.0 ? -1.0 : 0.0);
            gbar(i, j) = s * inv[i] * inv[j];
            diag_acc += std::abs(c);
        }
        gbar(i, i) = -diag_acc * inv[i] * inv[i];
    }
    Matrix dw = matmul(gbar, w);
    dw *= 2.0;

    res.grads.resize(n);
    // left partial products P_l = W_{n-1} ... W_{l+1}, walked from the top
    Matrix left;  // empty means identity
    for (std::size_t l = n; l-- > 0;) {
        Matrix t = (l == 0) ? dw : matmul_nt(dw, right[l]);  // dV/dW * Q_l^T
        res.grads[l] = left.empty() ? std::move(t) : matmul_tn(left, t);
        if (l > 0) left = left.empty() ? model.layer(l) : matmul(left, model.layer(l));
    }
    return res;
}

struct SpectralReport {
    std::vector<double> per_layer_spectral;
    std::vector<double> per_layer_frobenius;
    double product_spectral = 0.0;
    double collapsed_spectral = 0.0;
    double gershgorin = 0.0;
    Matrix cosine_matrix;

    /// Mean |cos| over off-diagonal pairs.
    double mean_offdiag_abs_cosine() const {
        const std::size_t k = cosine_matrix.rows();
        if (k < 2) return 0.0;
        return (l11_norm(cosine_matrix) - static_cast<double>(k)) / static_cast<double>(k * (k - 1));
    }
};

inline SpectralReport spectral_report(const MlpModel& model, const PowerIterationOptions& opts = {}) {
    SpectralReport r;
    r.product_spectral = 1.0;
    for (const auto& l : model.layers()) {
        r.per_layer_spectral.push_back(power_iteration(l, opts).value);
        r.per_layer_frobenius.push_back(frobenius_norm(l));
        r.product_spectral *= r.per_layer_spectral.back();
    }
    const Matrix w = collapsed_weight(model);
    r.collapsed_spectral = power_iteration(w, opts).value;
    r.gershgorin = gershgorin_bound(w);
    r.cosine_matrix = cosine_matrix(w);
    return r;
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    const std::size_t r = j.size();
    const std::size_t c = r ? j.at(0).size() : 0;
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        if (j.at(i).size() != c) throw std::invalid_argument("matrix_from_json: ragged rows");
        for (std::size_t k = 0; k < c; ++k) m(i, k) = j.at(i).at(k).get<double>();
    }
    return m;
}

inline void to_json(nlohmann::json& j, const SpectralReport& r) {
    j = nlohmann::json{{"per_layer_spectral", r.per_layer_spectral},
                       {"per_layer_frobenius", r.per_layer_frobenius},
                       {"product_spectral", r.product_spectral},
                       {"collapsed_spectral", r.collapsed_spectral},
                       {"gershgorin", r.gershgorin},
                       {"cosine_matrix", matrix_to_json(r.cosine_matrix)}};
}

inline void from_json(const nlohmann::json& j, SpectralReport& r) {
    j.at("per_layer_spectral").get_to(r.per_layer_spectral);
    j.at("per_layer_frobenius").get_to(r.per_layer_frobenius);
    j.at("product_spectral").get_to(r.product_spectral);
    j.at("collapsed_spectral").get_to(r.collapsed_spectral);
    j.at("gershgorin").get_to(r.gershgorin);
    r.cosine_matrix = matrix_from_json(j.at("cosine_matrix"));
}

}  // namespace smoothcert
