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
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "smoothcert/matrix.hpp"
#include "smoothcert/rng.hpp"

namespace smoothcert {

/// Labelled samples; inputs are raw (no bias coordinate), one row per sample.
struct Dataset {
    Matrix inputs;
    std::vector<std::size_t> labels;
    std::string name;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return inputs.cols(); }
    std::span<const double> input(std::size_t i) const { return inputs.row(i); }

    void validate() const {
        if (inputs.rows() != labels.size()) throw std::invalid_argument("Dataset: row count differs from label count");
        for (std::size_t y : labels)
            if (y >= num_classes) throw std::invalid_argument("Dataset: label out of range");
    }

    /// Rows [offset, offset + count), clipped to the end.
    Dataset slice(std::size_t offset, std::size_t count) const {
        Dataset out;
        out.name = name;
        out.num_classes = num_classes;
        if (offset >= size()) {
            out.inputs = Matrix(0, dim());
            return out;
        }
        const std::size_t end = std::min(size(), offset + count);
        out.inputs = Matrix(end - offset, dim());
        std::copy(inputs.data().begin() + static_cast<std::ptrdiff_t>(offset * dim()),
                  inputs.data().begin() + static_cast<std::ptrdiff_t>(end * dim()), out.inputs.data().begin());
        out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(offset),
                          labels.begin() + static_cast<std::ptrdiff_t>(end));
        return out;
    }

    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset out;
        out.name = name;
        out.num_classes = num_classes;
        out.inputs = Matrix(idx.size(), dim());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            auto src = input(idx[r]);
            std::copy(src.begin(), src.end(), out.inputs.row(r).begin());
            out.labels.push_back(labels[idx[r]]);
        }
        return out;
    }

    /// Largest l2 norm of a model input, optionally counting a constant-1
    /// bias coordinate.
    double max_input_norm(bool with_bias_coordinate) const {
        double best = 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            const double sq = dot(input(i), input(i)) + (with_bias_coordinate ? 1.0 : 0.0);
            best = std::max(best, sq);
        }
        return std::sqrt(best);
    }
};

/// k Gaussian clusters around random points of the unit sphere mapped into
/// [0,1]^d (center = 0.5 + 0.5 u). Labels cycle 0..k-1 so classes are
/// balanced within one sample; coordinates are clipped to [0, 1].
inline Dataset synth_blobs(std::size_t k, std::size_t d, std::size_t m, double spread, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("synth_blobs: need at least 2 classes");
    if (d < 1) throw std::invalid_argument("synth_blobs: need d >= 1");
    if (spread < 0.0) throw std::invalid_argument("synth_blobs: spread must be >= 0");
    auto eng = make_stream(seed, 0, Phase::data);
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix centers(k, d);
    for (std::size_t c = 0; c < k; ++c) {
        auto row = centers.row(c);
        for (double& v : row) v = nd(eng);
        const double nrm = norm2(row);
        for (double& v : row) v = 0.5 + 0.5 * v / nrm;
    }
    Dataset ds;
    ds.name = "blobs";
    ds.num_classes = k;
    ds.inputs = Matrix(m, d);
    ds.labels.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t c = i % k;
        ds.labels[i] = c;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = centers(c, j) + (spread > 0.0 ? spread * nd(eng) : 0.0);
            ds.inputs(i, j) = std::clamp(v, 0.0, 1.0);
        }
    }
    return ds;
}

}  // namespace smoothcert
