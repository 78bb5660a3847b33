// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "fp4/block_quant.hpp"
#include "fp4/matrix.hpp"

namespace fp4 {

/// Error metrics of a quantized tensor against the wide tensor it came from.
struct QuantStats {
  double rel_error = 0.0;      // ||deq - x||_F / ||x||_F
  double sqnr_db = 0.0;        // +inf when the error is zero
  double max_rel_error = 0.0;  // over nonzero elements
  std::size_t saturated = 0;   // |scaled element| > 6 before encoding
  std::size_t underflow = 0;   // nonzero element that decoded to zero
  double amax_max_rel_error = 0.0;  // worst block-amax reconstruction
  double mean_binades = 0.0;   // log2(max |code| / 0.5), over nonzero blocks
  double min_binades = 0.0;
  std::size_t nonzero_blocks = 0;
};

/// Full E2M1 dynamic range: log2(6 / 0.5).
inline const double kE2M1Binades = std::log2(6.0 / 0.5);

inline QuantStats quantization_stats(const Matrix& x, const QuantizedTensor& q) {
  if (x.rows() != q.rows() || x.cols() != q.cols()) throw ShapeError("quantization_stats: shapes differ");
  QuantStats s;
  const Matrix deq = dequantize(q);
  const BlockMap map = q.block_map();
  const double global = q.tensor_decode_scale().value_or(1.0);
  const bool nv = q.format().has_tensor_scale;

  double signal = 0.0, noise = 0.0;
  double binade_sum = 0.0;
  s.min_binades = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < map.count(); ++b) {
    const BlockExtent e = map.extent(b);
    const double scale = q.block_decode_scale(b);
    const double enc = nv ? 1.0 / (scale * global) : 0.0;
    double amax = 0.0, amax_deq = 0.0, max_code = 0.0;
    for (std::size_t r = e.row_begin; r < e.row_end; ++r)
      for (std::size_t c = e.col_begin; c < e.col_end; ++c) {
        const double v = x(r, c);
        const double d = deq(r, c);
        signal += v * v;
        noise += (v - d) * (v - d);
        const double scaled = nv ? v * enc : v / scale;
        if (std::fabs(scaled) > kE2M1Max) ++s.saturated;
        const double code = std::fabs(decode_e2m1(q.code(r, c)));
        if (v != 0.0) {
          s.max_rel_error = std::max(s.max_rel_error, std::fabs(d - v) / std::fabs(v));
          if (code == 0.0) ++s.underflow;
        }
        if (std::fabs(v) > amax) {
          amax = std::fabs(v);
          amax_deq = std::fabs(d);
        }
        max_code = std::max(max_code, code);
      }
    if (amax > 0.0) {
      s.amax_max_rel_error = std::max(s.amax_max_rel_error, std::fabs(amax_deq - amax) / amax);
      const double binades = max_code > 0.0 ? std::log2(max_code / 0.5) : 0.0;
      binade_sum += binades;
      s.min_binades = std::min(s.min_binades, binades);
      ++s.nonzero_blocks;
    }
  }
  if (s.nonzero_blocks == 0) s.min_binades = 0.0;
  s.mean_binades = s.nonzero_blocks ? binade_sum / static_cast<double>(s.nonzero_blocks) : 0.0;
  s.rel_error = signal > 0.0 ? std::sqrt(noise / signal) : 0.0;
  if (noise == 0.0)
    s.sqnr_db = std::numeric_limits<double>::infinity();
  else
    s.sqnr_db = 10.0 * std::log10(signal / noise);
  return s;
}

/// Fourth standardized moment E[(x-mu)^4] / var^2 (3 for a Gaussian).
inline double kurtosis(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double n = static_cast<double>(v.size());
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= n;
  double m2 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double d = (x - mu) * (x - mu);
    m2 += d;
    m4 += d * d;
  }
  m2 /= n;
  m4 /= n;
  return m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
}

}  // namespace fp4
