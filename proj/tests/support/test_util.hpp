// Copyright 2026 The smoothcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "smoothcert/matrix.hpp"
#include "smoothcert/mlp.hpp"
#include "smoothcert/rng.hpp"

namespace smoothcert::fixtures {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    auto eng = make_stream(seed, 0, Phase::generic);
    std::normal_distribution<double> nd(0.0, scale);
    Matrix m(r, c);
    for (double& v : m.data()) v = nd(eng);
    return m;
}

/// Gaussian weights, no bias coordinate unless asked.
inline MlpModel random_model(const std::vector<std::size_t>& dims, std::uint64_t seed, bool augmented = false) {
    std::vector<Matrix> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
        layers.push_back(random_matrix(dims[i + 1], dims[i], seed * 131 + i, 1.0 / std::sqrt(double(dims[i]))));
    return MlpModel(std::move(layers), augmented);
}

inline Vector random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    auto m = random_matrix(1, n, seed, scale);
    return m.data();
}

inline double rel_err(double a, double b) {
    const double den = std::max(std::abs(a), std::abs(b));
    return den == 0.0 ? 0.0 : std::abs(a - b) / den;
}

}  // namespace smoothcert::fixtures
