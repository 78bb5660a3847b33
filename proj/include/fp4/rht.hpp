// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// Random Hadamard transforms applied tile-wise along the dot-product
// dimension. H = S * H_d where H_d is the normalized Sylvester matrix and S a
// diagonal of random signs; since H * H^T = I, transforming both GEMM
// operands leaves the product unchanged: (A H)(H^T B) = A B.

#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "fp4/counter_rng.hpp"
#include "fp4/errors.hpp"
#include "fp4/matrix.hpp"

namespace fp4 {

struct HadamardSpec {
  std::size_t dim = 16;
  std::uint64_t sign_seed = 0;
  bool randomized = true;

  friend constexpr bool operator==(const HadamardSpec&, const HadamardSpec&) = default;
};

inline constexpr std::uint64_t kSignVectorStream = 0x5349474E5645430Aull;

/// Diagonal of S: +-1 per row, a pure function of the seed.
inline std::vector<int> sign_vector(const HadamardSpec& spec) {
  std::vector<int> signs(spec.dim, 1);
  if (!spec.randomized) return signs;
  const RandomStream stream{spec.sign_seed, kSignVectorStream};
  for (std::size_t i = 0; i < spec.dim; ++i) signs[i] = (stream.bits(i) & 1u) ? -1 : 1;
  return signs;
}

class HadamardMatrix {
 public:
  std::size_t dim() const noexcept { return m_.rows(); }
  double operator()(std::size_t i, std::size_t j) const noexcept { return m_(i, j); }
  const Matrix& matrix() const noexcept { return m_; }

 private:
  explicit HadamardMatrix(Matrix m) : m_(std::move(m)) {}
  friend HadamardMatrix build_hadamard(const HadamardSpec&);
  Matrix m_;
};

inline HadamardMatrix build_hadamard(const HadamardSpec& spec) {
  if (spec.dim < 2 || !std::has_single_bit(spec.dim))
    throw ShapeError("build_hadamard: dimension must be a power of two >= 2");
  const double norm = 1.0 / std::sqrt(static_cast<double>(spec.dim));
  const std::vector<int> signs = sign_vector(spec);
  Matrix h(spec.dim, spec.dim);
  for (std::size_t i = 0; i < spec.dim; ++i)
    for (std::size_t j = 0; j < spec.dim; ++j) {
      // Sylvester entry: (-1)^popcount(i & j)
      const double entry = (std::popcount(i & j) % 2 == 0) ? norm : -norm;
      h(i, j) = signs[i] * entry;
    }
  return HadamardMatrix(std::move(h));
}

/// Every 1 x d segment of each row is replaced by segment * H. Requires the
/// column count to be a multiple of d (pad with pad_cols first otherwise).
inline Matrix apply_rht_tiled(const Matrix& x, const HadamardMatrix& h) {
  const std::size_t d = h.dim();
  if (x.cols() % d != 0) throw ShapeError("apply_rht_tiled: column count is not a multiple of the transform size");
  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    auto out = y.row(r);
    for (std::size_t base = 0; base < in.size(); base += d)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += in[base + i] * h(i, j);
        out[base + j] = acc;
      }
  }
  return y;
}

inline Matrix apply_rht_tiled(const Matrix& x, const HadamardSpec& spec) {
  return apply_rht_tiled(x, build_hadamard(spec));
}

/// max |(A H_a)(H_b^T B) - A B| with A m x k and B k x n. With equal specs
/// this is pure accumulation error; with different sign seeds the transforms
/// no longer cancel.
inline double rht_pair_identity_check(const Matrix& a, const Matrix& b, const HadamardSpec& spec_a,
                                      const HadamardSpec& spec_b) {
  if (a.cols() != b.rows()) throw ShapeError("rht_pair_identity_check: inner dimensions differ");
  const Matrix ah = apply_rht_tiled(a, spec_a);
  const Matrix hb = transpose(apply_rht_tiled(transpose(b), spec_b));
  return max_abs(subtract(matmul(ah, hb), matmul(a, b)));
}

inline double rht_pair_identity_check(const Matrix& a, const Matrix& b, const HadamardSpec& spec) {
  return rht_pair_identity_check(a, b, spec, spec);
}

}  // namespace fp4
