// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random numbers (Philox4x32-10). Every draw is a pure function
// of (key, counter), so results never depend on evaluation order or thread
// scheduling.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace fp4 {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

constexpr Philox4x32Counter philox4x32(Philox4x32Counter ctr, Philox4x32Key key) noexcept {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kW0;
      key[1] += kW1;
    }
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
  }
  return ctr;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Folds a list of identifiers (layer, step, role, ...) into one stream id.
constexpr std::uint64_t mix_ids(std::initializer_list<std::uint64_t> ids) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC908ull;
  for (std::uint64_t id : ids) h = splitmix64(h ^ splitmix64(id));
  return h;
}

/// Immutable randomness-stream handle. `seed` is the Philox key; `stream`
/// selects an independent sequence under that key (tensor identity).
struct RandomStream {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    const auto out = philox4x32(
        {static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
         static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)},
        {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
    return (std::uint64_t{out[1]} << 32) | out[0];
  }

  /// Uniform in [0, 1) with 53 random bits.
  constexpr double uniform(std::uint64_t counter) const noexcept {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on two consecutive counters.
  double normal(std::uint64_t counter) const noexcept {
    const double u1 = 1.0 - uniform(2 * counter);  // (0, 1]
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr RandomStream substream(std::initializer_list<std::uint64_t> ids) const noexcept {
    std::uint64_t h = stream;
    for (std::uint64_t id : ids) h = splitmix64(h ^ splitmix64(id));
    return {seed, h};
  }
};

}  // namespace fp4
