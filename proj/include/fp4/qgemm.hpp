// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// Emulated block-scaled GEMM with Tensor-Core semantics. Both operands are
// K-major (blocks run along the dot-product dimension), so
//
//   scaled_gemm(a, b) = dequantize(a) * dequantize(b)^T
//
// computed as s_dec^a * s_dec^b * sum_blocks(s_b^a * s_b^b * sum_k(code_a * code_b)).
// Code products and in-block sums are exact in binary64; block partials are
// accumulated in ascending K order.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fp4/block_quant.hpp"
#include "fp4/errors.hpp"
#include "fp4/matrix.hpp"

namespace fp4 {

enum class GemmKind : std::uint8_t { Fprop = 0, Dgrad = 1, Wgrad = 2 };

inline constexpr const char* gemm_name(GemmKind k) noexcept {
  switch (k) {
    case GemmKind::Fprop: return "fprop";
    case GemmKind::Dgrad: return "dgrad";
    case GemmKind::Wgrad: return "wgrad";
  }
  return "?";
}

/// Precision of the running sum over blocks. Binary32 rounds the running
/// sum to float after every block, approximating FP32 accumulators.
enum class Accumulation : std::uint8_t { Binary64, Binary32 };

namespace detail {

struct KMajorOperand {
  std::size_t rows = 0, k = 0, kblocks = 0, block_len = 0;
  std::vector<double> codes;   // rows x k decoded E2M1 values
  std::vector<double> scales;  // rows x kblocks block scales times the tensor scale
};

inline KMajorOperand unpack_k_major(const QuantizedTensor& q, const char* which) {
  const LayoutKind kind = q.layout().kind;
  if (kind != LayoutKind::Rows1D && kind != LayoutKind::Square2D)
    throw ShapeError(std::string("scaled_gemm: operand ") + which + " must be blocked along the dot-product dimension");
  KMajorOperand op;
  op.rows = q.rows();
  op.k = q.cols();
  op.block_len = q.layout().block_len;
  op.kblocks = (op.k + op.block_len - 1) / op.block_len;
  op.codes.resize(op.rows * op.k);
  op.scales.resize(op.rows * op.kblocks);
  const BlockMap map = q.block_map();
  std::vector<double> decoded(q.block_count());
  // Same product as dequantize(), so representable operands stay exact.
  const double global = q.tensor_decode_scale().value_or(1.0);
  for (std::size_t b = 0; b < decoded.size(); ++b) decoded[b] = q.block_decode_scale(b) * global;
  for (std::size_t r = 0; r < op.rows; ++r) {
    for (std::size_t c = 0; c < op.k; ++c) op.codes[r * op.k + c] = decode_e2m1(q.code(r, c));
    for (std::size_t kb = 0; kb < op.kblocks; ++kb)
      op.scales[r * op.kblocks + kb] = decoded[map.block_of(r, kb * op.block_len)];
  }
  return op;
}

}  // namespace detail

/// dequantize(a) * dequantize(b)^T with a: M x K and b: N x K. Operands must
/// share the format and be Rows1D or Square2D (Square2D scales are used as if
/// replicated across each 1 x L row segment).
inline Matrix scaled_gemm(const QuantizedTensor& a, const QuantizedTensor& b,
                          Accumulation accumulation = Accumulation::Binary64) {
  if (a.cols() != b.cols()) throw ShapeError("scaled_gemm: dot-product dimensions differ");
  if (a.format() != b.format()) throw ShapeError("scaled_gemm: operand formats differ");
  if (a.layout().block_len != b.layout().block_len) throw ShapeError("scaled_gemm: operand block lengths differ");
  const detail::KMajorOperand pa = detail::unpack_k_major(a, "a");
  const detail::KMajorOperand pb = detail::unpack_k_major(b, "b");
  const std::size_t K = pa.k, L = pa.block_len, KB = pa.kblocks;
  Matrix out(pa.rows, pb.rows);
  for (std::size_t i = 0; i < pa.rows; ++i) {
    const double* ca = pa.codes.data() + i * K;
    const double* sa = pa.scales.data() + i * KB;
    for (std::size_t j = 0; j < pb.rows; ++j) {
      const double* cb = pb.codes.data() + j * K;
      const double* sb = pb.scales.data() + j * KB;
      double acc = 0.0;
      float acc32 = 0.0f;
      for (std::size_t kb = 0; kb < KB; ++kb) {
        const std::size_t end = std::min(K, (kb + 1) * L);
        double partial = 0.0;
        for (std::size_t k = kb * L; k < end; ++k) partial += ca[k] * cb[k];
        if (accumulation == Accumulation::Binary64)
          acc += sa[kb] * sb[kb] * partial;
        else
          acc32 += static_cast<float>(sa[kb] * sb[kb]) * static_cast<float>(partial);
      }
      out(i, j) = accumulation == Accumulation::Binary64 ? acc : static_cast<double>(acc32);
    }
  }
  return out;
}

/// Logical transpose of a Square2D tensor: codes and scale tiles transpose
/// together, so the dequantized values are exactly transposed. 1D layouts
/// are refused because the dot-product dimension would change.
inline QuantizedTensor transpose_quantized_view(const QuantizedTensor& q) {
  if (q.layout().kind != LayoutKind::Square2D)
    throw NotTransposable("transpose_quantized_view: only 2D-scaled tensors can be transposed; requantize instead");
  QuantizedTensor t(q.cols(), q.rows(), q.format(), q.layout());
  for (std::size_t r = 0; r < q.rows(); ++r)
    for (std::size_t c = 0; c < q.cols(); ++c) t.set_code(c, r, q.code(r, c));
  const BlockMap src = q.block_map();
  const BlockMap dst = t.block_map();
  for (std::size_t gr = 0; gr < src.grid_rows(); ++gr)
    for (std::size_t gc = 0; gc < src.grid_cols(); ++gc)
      t.set_scale_code(gc * dst.grid_cols() + gr, q.scale_codes()[gr * src.grid_cols() + gc]);
  if (auto s = q.tensor_decode_scale()) t.set_tensor_decode_scale(*s);
  return t;
}

/// Rows1D image of a Square2D tensor with each tile scale copied to the
/// sixteen 1 x L row segments it covers.
inline QuantizedTensor replicate_square_scales(const QuantizedTensor& q) {
  if (q.layout().kind != LayoutKind::Square2D) throw ShapeError("replicate_square_scales: tensor is not 2D-scaled");
  const std::size_t L = q.layout().block_len;
  QuantizedTensor out(q.rows(), q.cols(), q.format(), ScalingLayout::rows(L));
  for (std::size_t r = 0; r < q.rows(); ++r)
    for (std::size_t c = 0; c < q.cols(); ++c) out.set_code(r, c, q.code(r, c));
  const BlockMap src = q.block_map();
  const BlockMap dst = out.block_map();
  for (std::size_t r = 0; r < q.rows(); ++r)
    for (std::size_t kb = 0; kb < dst.grid_cols(); ++kb)
      out.set_scale_code(dst.block_of(r, kb * L), q.scale_codes()[src.block_of(r, kb * L)]);
  if (auto s = q.tensor_decode_scale()) out.set_tensor_decode_scale(*s);
  return out;
}

/// Round to the nearest bfloat16 value (8 significant bits, ties to even).
inline double to_bf16(double x) noexcept {
  if (x == 0.0 || !std::isfinite(x)) return x;
  int e = 0;
  const double m = std::frexp(x, &e);
  return std::ldexp(detail::round_half_even(std::ldexp(m, 8)), e - 8);
}

inline Matrix to_bf16(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.values()) v = to_bf16(v);
  return out;
}

}  // namespace fp4
