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

// PAC-Bayes quantities for smoothed majority-vote networks: the chi-square
// level tau, the admissible noise variance Psi, the complexity term Phi, the
// KL term, the explicit-constant generalization bound, and the squared
// certified radius eps_x.

#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include "smoothcert/special.hpp"

namespace smoothcert {

inline double chi2_cdf(double x, double dof) {
    if (!(dof >= 1.0)) throw std::invalid_argument("chi2_cdf: degrees of freedom must be >= 1");
    if (x < 0.0) throw std::invalid_argument("chi2_cdf: x must be >= 0");
    return special::gamma_p(0.5 * dof, 0.5 * x);
}

/// Solves F_{chi2_d}(tau) = sqrt(2)/2 by bisection, narrowing until the
/// bracket stops shrinking in double precision.
inline double tau_solve(double dof) {
    const double target = std::sqrt(2.0) / 2.0;
    double lo = 0.0, hi = std::max(1.0, dof);
    while (chi2_cdf(hi, dof) < target) {
        lo = hi;
        hi *= 2.0;
    }
    for (int i = 0; i < 400; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (chi2_cdf(mid, dof) < target)
            lo = mid;
        else
            hi = mid;
    }
    const double flo = std::abs(chi2_cdf(lo, dof) - target);
    const double fhi = std::abs(chi2_cdf(hi, dof) - target);
    return flo < fhi ? lo : hi;
}

struct BoundInputs {
    double gamma = 0.0;
    double delta = 0.0;
    std::size_t m = 0;  // training set size
    double B = 0.0;     // max l2 norm of (bias-augmented) training inputs
    std::size_t n = 0;  // layer count
    std::size_t h = 0;  // hidden width
    std::size_t d = 0;  // input dimension, bias coordinate included
    std::vector<double> per_layer_spectral;
    std::vector<double> per_layer_frobenius;

    void validate() const {
        auto fail = [](const std::string& what) { throw std::invalid_argument("BoundInputs: " + what); };
        if (!(gamma > 0.0)) fail("gamma must be > 0");
        if (!(delta > 0.0 && delta < 1.0)) fail("delta must be in (0, 1)");
        if (m < 2) fail("m must be >= 2");
        if (!(B > 0.0)) fail("B must be > 0");
        if (n == 0 || h == 0 || d == 0) fail("n, h, d must be positive");
        if (per_layer_spectral.size() != n || per_layer_frobenius.size() != n) fail("norm lists must have length n");
        for (double s : per_layer_spectral)
            if (!(s > 0.0)) fail("spectral norms must be > 0");
        for (double f : per_layer_frobenius)
            if (!(f >= 0.0)) fail("Frobenius norms must be >= 0");
    }
};

/// prod_i ||W_i||_2^{(n-1)/n}
inline double spectral_product_power(const std::vector<double>& spectral, double exponent) {
    double p = 1.0;
    for (double s : spectral) p *= std::pow(s, exponent);
    return p;
}

/// Psi = ((gamma / (2^8 n sqrt(h ln(8nh)) sqrt(tau) prod ||W_i||^{(n-1)/n}) + B^2/(4 tau))^{1/2}
///        - B / (2 sqrt(tau)))^2
///
/// The difference of square roots is rationalized, sqrt(a+b) - sqrt(b) =
/// a / (sqrt(a+b) + sqrt(b)), because a is many orders of magnitude below b
/// for realistic inputs.
inline double psi(const BoundInputs& in, double tau) {
    in.validate();
    if (!(tau > 0.0)) throw std::invalid_argument("psi: tau must be > 0");
    const double n = static_cast<double>(in.n);
    const double h = static_cast<double>(in.h);
    const double prod = spectral_product_power(in.per_layer_spectral, (n - 1.0) / n);
    const double a = in.gamma / (256.0 * n * std::sqrt(h * std::log(8.0 * n * h)) * std::sqrt(tau) * prod);
    const double b = in.B * in.B / (4.0 * tau);
    const double diff = a / (std::sqrt(a + b) + std::sqrt(b));
    return std::max(0.0, diff * diff);
}

/// Phi = sum_i(||W_i||_F^2 / ||W_i||_2^2) / (Psi / (prod_i ||W_i||_2^2)^{1/n}).
/// Returns +inf when Psi is 0 (the bound is vacuous).
inline double phi(const BoundInputs& in, double psi_value) {
    in.validate();
    if (psi_value < 0.0) throw std::invalid_argument("phi: psi must be >= 0");
    if (psi_value == 0.0) return std::numeric_limits<double>::infinity();
    const double n = static_cast<double>(in.n);
    double ratio_sum = 0.0;
    for (std::size_t i = 0; i < in.n; ++i) {
        const double s = in.per_layer_spectral[i], f = in.per_layer_frobenius[i];
        ratio_sum += (f * f) / (s * s);
    }
    const double geo = spectral_product_power(in.per_layer_spectral, 2.0 / n);
    return ratio_sum / (psi_value / geo);
}

/// KL(w+u || P) <= sum_i ||W_i||_F^2 / (2 Psi).
inline double kl_term(const std::vector<double>& per_layer_frobenius, double psi_value) {
    if (psi_value < 0.0) throw std::invalid_argument("kl_term: psi must be >= 0");
    double s = 0.0;
    for (double f : per_layer_frobenius) s += f * f;
    if (psi_value == 0.0) return s == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return s / (2.0 * psi_value);
}

/// L_hat + 4 sqrt((KL + ln(6m/delta)) / (m - 1)).
inline double generalization_bound(double empirical_margin_loss, double kl, std::size_t m, double delta) {
    if (m < 2) throw std::invalid_argument("generalization_bound: m must be >= 2");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("generalization_bound: delta must be in (0, 1)");
    if (kl < 0.0) throw std::invalid_argument("generalization_bound: kl must be >= 0");
    const double md = static_cast<double>(m);
    return empirical_margin_loss + 4.0 * std::sqrt((kl + std::log(6.0 * md / delta)) / (md - 1.0));
}

/// Upper clamp applied to p_A before taking logs.
inline constexpr double kMaxProbability = 1.0 - 1e-12;

/// -ln(1 - (sqrt(pA) - sqrt(pB))^2), the data-dependent factor shared by
/// eps_x and the certified radius.
inline double hellinger_log_term(double pa, double pb) {
    if (!(pa <= 1.0 && pb >= 0.0 && pa >= pb))
        throw std::invalid_argument("need 1 >= pA >= pB >= 0 (got pA=" + std::to_string(pa) +
                                    ", pB=" + std::to_string(pb) + ")");
    pa = std::min(pa, kMaxProbability);
    pb = std::min(pb, pa);
    const double den = std::sqrt(pa) + std::sqrt(pb);
    const double gap = den > 0.0 ? (pa - pb) / den : 0.0;  // sqrt(pA) - sqrt(pB) without cancellation
    return -std::log1p(-gap * gap);
}

/// eps_x = -ln(1 - (sqrt(pA) - sqrt(pB))^2) * 2 Psi; sqrt(eps_x) is the radius.
inline double eps_x(double pa, double pb, double psi_value) {
    if (psi_value < 0.0) throw std::invalid_argument("eps_x: psi must be >= 0");
    return hellinger_log_term(pa, pb) * 2.0 * psi_value;
}

struct BoundReport {
    BoundInputs inputs;
    double empirical_margin_loss = 0.0;
    double tau = 0.0;
    double psi = 0.0;
    double phi = 0.0;
    double kl_term = 0.0;
    double bound_value = 0.0;
    std::optional<double> eps_x;
    std::optional<double> pa;
    std::optional<double> pb;
    bool vacuous = false;
};

inline BoundReport evaluate_bounds(const BoundInputs& in, double empirical_margin_loss,
                                   std::optional<double> pa = std::nullopt, std::optional<double> pb = std::nullopt) {
    in.validate();
    BoundReport r;
    r.inputs = in;
    r.empirical_margin_loss = empirical_margin_loss;
    r.tau = tau_solve(static_cast<double>(in.d));
    r.psi = psi(in, r.tau);
    r.phi = phi(in, r.psi);
    r.kl_term = kl_term(in.per_layer_frobenius, r.psi);
    r.bound_value = std::isfinite(r.kl_term) ? generalization_bound(empirical_margin_loss, r.kl_term, in.m, in.delta)
                                             : std::numeric_limits<double>::infinity();
    if (pa && pb) {
        r.pa = pa;
        r.pb = pb;
        r.eps_x = eps_x(*pa, *pb, r.psi);
    }
    r.vacuous = !(r.bound_value < 1.0);
    return r;
}

namespace detail {
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }
}  // namespace detail

inline void to_json(nlohmann::json& j, const BoundInputs& in) {
    j = nlohmann::json{{"gamma", in.gamma},
                       {"delta", in.delta},
                       {"m", in.m},
                       {"B", in.B},
                       {"n", in.n},
                       {"h", in.h},
                       {"d", in.d},
                       {"per_layer_spectral", in.per_layer_spectral},
                       {"per_layer_frobenius", in.per_layer_frobenius}};
}

inline void to_json(nlohmann::json& j, const BoundReport& r) {
    j = nlohmann::json{{"tau", r.tau},
                       {"psi", r.psi},
                       {"phi", detail::finite_or_null(r.phi)},
                       {"kl_term", detail::finite_or_null(r.kl_term)},
                       {"bound_value", detail::finite_or_null(r.bound_value)},
                       {"empirical_margin_loss", r.empirical_margin_loss},
                       {"eps_x", r.eps_x ? nlohmann::json(*r.eps_x) : nlohmann::json()},
                       {"radius", r.eps_x ? nlohmann::json(std::sqrt(*r.eps_x)) : nlohmann::json()},
                       {"pa", r.pa ? nlohmann::json(*r.pa) : nlohmann::json()},
                       {"pb", r.pb ? nlohmann::json(*r.pb) : nlohmann::json()},
                       {"vacuous", r.vacuous},
                       {"inputs", r.inputs}};
}

}  // namespace smoothcert
