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

#include <array>
#include <cstdint>
#include <limits>
#include <random>
#include <span>

namespace smoothcert {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// The 64-bit key selects an independent stream; the 128-bit counter walks
/// through it. Satisfies UniformRandomBitGenerator so it plugs into <random>
/// distributions.
class Philox4x32 {
public:
    using result_type = std::uint32_t;

    explicit Philox4x32(std::uint64_t key = 0, std::uint64_t counter_hi = 0) noexcept
        : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
          ctr_{0, 0, static_cast<std::uint32_t>(counter_hi), static_cast<std::uint32_t>(counter_hi >> 32)} {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (idx_ == 4) {
            block_ = generate(ctr_, key_);
            increment();
            idx_ = 0;
        }
        return block_[idx_++];
    }

    void discard(unsigned long long z) noexcept {
        while (z--) (*this)();
    }

    static std::array<std::uint32_t, 4> generate(std::array<std::uint32_t, 4> ctr,
                                                 std::array<std::uint32_t, 2> key) noexcept {
        constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
        constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
            key[0] += W0;
            key[1] += W1;
        }
        return ctr;
    }

private:
    void increment() noexcept {
        if (++ctr_[0] != 0) return;
        ++ctr_[1];
    }

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> ctr_;
    std::array<std::uint32_t, 4> block_{};
    int idx_ = 4;
};

/// SplitMix64 finalizer; used to hash seed tuples into stream keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

enum class Phase : std::uint64_t {
    selection = 1,
    estimation = 2,
    training = 3,
    init = 4,
    sigma_search = 5,
    probe = 6,
    data = 7,
    weight_cache = 8,
    generic = 9,
};

/// Seed of the stream for (base_seed, index, phase). Streams for distinct
/// tuples are independent, so any evaluation order reproduces the same draws.
constexpr std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t index, Phase phase) noexcept {
    return mix64(mix64(mix64(base_seed) ^ index) ^ (static_cast<std::uint64_t>(phase) * 0x632BE59BD9B4E019ull));
}

/// Engine for an already-derived 64-bit stream seed.
inline Philox4x32 engine_from_seed(std::uint64_t stream_seed) noexcept {
    return Philox4x32(stream_seed, mix64(stream_seed));
}

inline Philox4x32 make_stream(std::uint64_t base_seed, std::uint64_t index, Phase phase) noexcept {
    return engine_from_seed(derive_seed(base_seed, index, phase));
}

/// Fills `out` with N(0, sigma^2) draws.
template <class Engine>
void fill_gaussian(Engine& eng, std::span<double> out, double sigma) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& v : out) v = sigma * nd(eng);
}

}  // namespace smoothcert
