// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared generators and reference oracles for the test suites.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fp4/fp4.hpp"

namespace fp4::testing {

/// Deterministic value generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed, std::uint64_t stream = 0x7E57) : s_{seed, stream}, g_(s_.substream({1})) {}

  double uniform() { return s_.uniform(n_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return g_.normal(n_++); }
  std::uint64_t bits() { return s_.bits(n_++); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(bits() % n); }

  /// Gaussian entries with standard deviation `scale`.
  Matrix gaussian(std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = scale * normal();
    return m;
  }

  /// Heavy-tailed: Gaussian body with a few entries multiplied by `spike`.
  Matrix spiky(std::size_t rows, std::size_t cols, double spike, double prob) {
    Matrix m = gaussian(rows, cols);
    for (double& v : m.values())
      if (uniform() < prob) v *= spike;
    return m;
  }

  /// Entries drawn log-uniformly over `binades` binades, random sign.
  Matrix wide_range(std::size_t rows, std::size_t cols, double binades) {
    Matrix m(rows, cols);
    for (double& v : m.values()) {
      const double mag = std::exp2(uniform(-binades / 2, binades / 2));
      v = uniform() < 0.5 ? -mag : mag;
    }
    return m;
  }

 private:
  RandomStream s_, g_;
  std::uint64_t n_ = 0;
};

/// The E2M1 codebook as a plain list of the 16 decoded values, in code order.
inline std::vector<double> e2m1_codebook() {
  return {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, -0.0, -0.5, -1.0, -1.5, -2.0, -3.0, -4.0, -6.0};
}

/// Brute-force nearest E2M1 code: minimal distance, ties to the code with a
/// zero mantissa bit (bit 0), saturating beyond +-6.
inline std::uint8_t e2m1_oracle(double x) {
  const std::vector<double> book = e2m1_codebook();
  const std::uint8_t sign = std::signbit(x) ? 8 : 0;
  double best_d = std::numeric_limits<double>::infinity();
  std::uint8_t best = 0;
  for (std::uint8_t c = 0; c < 8; ++c) {
    const double d = std::fabs(std::fabs(x) - book[c]);
    if (d < best_d || (d == best_d && (c & 1) == 0)) {
      best_d = d;
      best = c;
    }
  }
  return static_cast<std::uint8_t>(sign | best);
}

/// E4M3 value of a non-negative code, from the field definitions.
inline double e4m3_field_value(std::uint8_t bits) {
  const int e = (bits >> 3) & 0xF;
  const int m = bits & 7;
  const double mag = e == 0 ? (m / 8.0) * std::exp2(1 - 7) : (1.0 + m / 8.0) * std::exp2(e - 7);
  return (bits & 0x80) ? -mag : mag;
}

/// Nearest E4M3 code by scanning the non-negative finite grid; ties to an
/// even mantissa; magnitudes above 448 saturate.
inline std::uint8_t e4m3_oracle(double x) {
  const std::uint8_t sign = std::signbit(x) ? 0x80 : 0;
  const double a = std::fabs(x);
  if (a > 448.0) return sign | 0x7E;
  double best_d = std::numeric_limits<double>::infinity();
  std::uint8_t best = 0;
  for (int c = 0; c <= 0x7E; ++c) {
    const double d = std::fabs(a - e4m3_field_value(static_cast<std::uint8_t>(c)));
    if (d < best_d || (d == best_d && (c & 1) == 0)) {
      best_d = d;
      best = static_cast<std::uint8_t>(c);
    }
  }
  return sign | best;
}

/// Textbook definition of the reference GEMM operands.
inline Matrix dequantized_product(const QuantizedTensor& a, const QuantizedTensor& b) {
  return matmul(dequantize(a), transpose(dequantize(b)));
}

}  // namespace fp4::testing
