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
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "smoothcert/dataset.hpp"
#include "smoothcert/mlp.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/smoothing.hpp"
#include "smoothcert/train.hpp"

namespace smoothcert {

/// 0.01, 0.02, ..., 1.00
inline std::vector<double> default_sigma2_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 100; ++i) g.push_back(i / 100.0);
    return g;
}

struct SigmaSearchConfig {
    std::vector<double> grid = default_sigma2_grid();  // candidate weight-noise variances, ascending
    std::size_t samples = 50;
    double tolerance = 0.02;
    std::size_t eval_subset = 2048;  // leading training points scored; 0 = all
    bool full_scan = false;          // keep scanning past the first rejected variance
    std::size_t workers = 1;

    void validate() const {
        if (grid.empty()) throw std::invalid_argument("SigmaSearchConfig: empty grid");
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!(grid[i] > 0.0)) throw std::invalid_argument("SigmaSearchConfig: grid values must be > 0");
            if (i > 0 && !(grid[i] > grid[i - 1])) throw std::invalid_argument("SigmaSearchConfig: grid must ascend");
        }
        if (samples < 1) throw std::invalid_argument("SigmaSearchConfig: samples must be >= 1");
        if (!(tolerance > 0.0 && tolerance < 1.0)) throw std::invalid_argument("SigmaSearchConfig: tolerance must be in (0, 1)");
    }
};

struct SigmaTracePoint {
    double sigma2 = 0.0;
    double mean_drop = 0.0;
};

struct SigmaSelection {
    double sigma2 = 0.0;
    bool flagged = false;  // nothing met the tolerance; sigma2 is the grid minimum
    double base_accuracy = 0.0;
    std::vector<SigmaTracePoint> trace;
};

/// Mean training accuracy drop of f_{w+u_i}, u_i ~ N(0, sigma2 I), against f_w.
/// Copy i draws from stream (seed, grid_index, i).
inline double mean_accuracy_drop(const MlpModel& model, const Dataset& eval, double base_accuracy, double sigma2,
                                 std::size_t samples, std::uint64_t stream, std::size_t workers = 1) {
    const double sigma = std::sqrt(sigma2);
    std::vector<double> acc(samples, 0.0);
    parallel_for(samples, workers, [&](std::size_t i) {
        auto eng = make_stream(stream, i, Phase::sigma_search);
        MlpModel perturbed = model;
        for (auto& l : perturbed.layers()) {
            std::normal_distribution<double> nd(0.0, 1.0);
            for (double& w : l.data()) w += sigma * nd(eng);
        }
        acc[i] = plain_accuracy(perturbed, eval);
    });
    double sum = 0.0;
    for (double a : acc) sum += a;
    return std::max(0.0, base_accuracy - sum / static_cast<double>(samples));
}

/// Largest grid variance whose mean accuracy drop stays within tolerance.
inline SigmaSelection select_sigma(const MlpModel& model, const Dataset& train_data, const SigmaSearchConfig& cfg,
                                   std::uint64_t seed) {
    cfg.validate();
    if (train_data.size() == 0) throw std::invalid_argument("select_sigma: empty training data");
    const Dataset eval = (cfg.eval_subset == 0 || cfg.eval_subset >= train_data.size())
                             ? train_data
                             : train_data.slice(0, cfg.eval_subset);
    SigmaSelection out;
    out.base_accuracy = plain_accuracy(model, eval);
    bool any = false;
    for (std::size_t g = 0; g < cfg.grid.size(); ++g) {
        const double drop = mean_accuracy_drop(model, eval, out.base_accuracy, cfg.grid[g], cfg.samples,
                                               derive_seed(seed, g, Phase::sigma_search), cfg.workers);
        out.trace.push_back({cfg.grid[g], drop});
        if (drop <= cfg.tolerance) {
            out.sigma2 = cfg.grid[g];
            any = true;
        } else if (!cfg.full_scan) {
            break;
        }
    }
    if (!any) {
        out.sigma2 = cfg.grid.front();
        out.flagged = true;
    }
    return out;
}

}  // namespace smoothcert
