// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor-level microscaled FP4 quantization.
//
// NVFP4 uses two-level scaling. A binary64 tensor scale maps the tensor amax
// onto 6 * 448 (E2M1 max times E4M3 max); each 16-element block then stores
// an E4M3 decode scale so its amax lands on the E2M1 maximum:
//
//   s_enc     = 6 * 448 / amax_x            s_dec = 1 / s_enc
//   s_dec_b   = e4m3(amax_b / 6 * s_enc)    (round-to-nearest-even)
//   s_enc_b   = 1 / (s_dec_b * s_dec)
//   code_i    = e2m1(x_i * s_enc_b)
//   x_i      ~= code_i * s_dec_b * s_dec
//
// MXFP4 uses 32-element blocks with a UE8M0 decode scale rounded up to the
// next power of two (amax_b / 6), and no tensor scale.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fp4/codecs.hpp"
#include "fp4/errors.hpp"
#include "fp4/matrix.hpp"

namespace fp4 {

enum class FormatKind : std::uint8_t { NVFP4 = 1, MXFP4 = 2 };
enum class ScaleCodec : std::uint8_t { E4M3 = 1, UE8M0 = 2 };

struct FormatSpec {
  FormatKind kind = FormatKind::NVFP4;
  std::size_t block_len = 16;
  ScaleCodec scale_codec = ScaleCodec::E4M3;
  bool has_tensor_scale = true;

  static constexpr FormatSpec nvfp4() noexcept { return {FormatKind::NVFP4, 16, ScaleCodec::E4M3, true}; }
  static constexpr FormatSpec mxfp4() noexcept { return {FormatKind::MXFP4, 32, ScaleCodec::UE8M0, false}; }
  static constexpr FormatSpec of(FormatKind k) noexcept { return k == FormatKind::NVFP4 ? nvfp4() : mxfp4(); }

  constexpr std::string_view name() const noexcept { return kind == FormatKind::NVFP4 ? "nvfp4" : "mxfp4"; }

  friend constexpr bool operator==(const FormatSpec&, const FormatSpec&) = default;
};

inline std::optional<FormatKind> parse_format(std::string_view s) noexcept {
  if (s == "nvfp4") return FormatKind::NVFP4;
  if (s == "mxfp4") return FormatKind::MXFP4;
  return std::nullopt;
}

enum class LayoutKind : std::uint8_t { Rows1D = 1, Cols1D = 2, Square2D = 3 };

/// How blocks tile a matrix: Rows1D = 1 x L contiguous row segments,
/// Cols1D = L x 1 column segments, Square2D = L x L tiles.
struct ScalingLayout {
  LayoutKind kind = LayoutKind::Rows1D;
  std::size_t block_len = 16;

  static constexpr ScalingLayout rows(std::size_t len = 16) noexcept { return {LayoutKind::Rows1D, len}; }
  static constexpr ScalingLayout cols(std::size_t len = 16) noexcept { return {LayoutKind::Cols1D, len}; }
  static constexpr ScalingLayout square(std::size_t len = 16) noexcept { return {LayoutKind::Square2D, len}; }

  constexpr std::size_t block_rows() const noexcept { return kind == LayoutKind::Rows1D ? 1 : block_len; }
  constexpr std::size_t block_cols() const noexcept { return kind == LayoutKind::Cols1D ? 1 : block_len; }

  friend constexpr bool operator==(const ScalingLayout&, const ScalingLayout&) = default;
};

inline std::string_view layout_name(LayoutKind k) noexcept {
  switch (k) {
    case LayoutKind::Rows1D: return "rows";
    case LayoutKind::Cols1D: return "cols";
    case LayoutKind::Square2D: return "square";
  }
  return "?";
}

inline std::optional<LayoutKind> parse_layout_kind(std::string_view s) noexcept {
  if (s == "rows") return LayoutKind::Rows1D;
  if (s == "cols") return LayoutKind::Cols1D;
  if (s == "square") return LayoutKind::Square2D;
  return std::nullopt;
}

/// Row/column extent of one block, clipped to the logical shape.
struct BlockExtent {
  std::size_t row_begin, row_end, col_begin, col_end;
};

/// Block index map for a shape under a layout. Blocks are numbered
/// row-major over the block grid. Shapes that are not multiples of the block
/// dimensions are logically zero-padded; the padding holds no codes.
class BlockMap {
 public:
  BlockMap(std::size_t rows, std::size_t cols, ScalingLayout layout)
      : rows_(rows), cols_(cols), brows_(layout.block_rows()), bcols_(layout.block_cols()) {
    if (rows == 0 || cols == 0) throw ShapeError("block_decompose: zero dimension");
    if (layout.block_len == 0) throw ShapeError("block_decompose: zero block length");
    grid_rows_ = (rows + brows_ - 1) / brows_;
    grid_cols_ = (cols + bcols_ - 1) / bcols_;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t grid_rows() const noexcept { return grid_rows_; }
  std::size_t grid_cols() const noexcept { return grid_cols_; }
  std::size_t count() const noexcept { return grid_rows_ * grid_cols_; }
  bool padded() const noexcept { return rows_ % brows_ != 0 || cols_ % bcols_ != 0; }

  std::size_t block_of(std::size_t r, std::size_t c) const noexcept {
    return (r / brows_) * grid_cols_ + c / bcols_;
  }

  BlockExtent extent(std::size_t b) const noexcept {
    const std::size_t gr = b / grid_cols_;
    const std::size_t gc = b % grid_cols_;
    return {gr * brows_, std::min(rows_, (gr + 1) * brows_), gc * bcols_, std::min(cols_, (gc + 1) * bcols_)};
  }

 private:
  std::size_t rows_, cols_, brows_, bcols_;
  std::size_t grid_rows_ = 0, grid_cols_ = 0;
};

inline BlockMap block_decompose(std::size_t rows, std::size_t cols, ScalingLayout layout) {
  return BlockMap(rows, cols, layout);
}

/// Quantized matrix: packed E2M1 codes (row-major, two per byte, low nibble
/// first), one scale code per block in block-index order, and the tensor
/// decode scale for NVFP4.
class QuantizedTensor {
 public:
  QuantizedTensor(std::size_t rows, std::size_t cols, FormatSpec format, ScalingLayout layout)
      : rows_(rows),
        cols_(cols),
        format_(format),
        layout_(layout),
        codes_((rows * cols + 1) / 2, 0),
        scales_(BlockMap(rows, cols, layout).count(), 0) {
    if (format.has_tensor_scale) tensor_decode_scale_ = 1.0;
  }

  /// Assemble from stored parts, validating every structural invariant.
  static QuantizedTensor from_parts(std::size_t rows, std::size_t cols, FormatSpec format, ScalingLayout layout,
                                    std::vector<std::uint8_t> packed_codes, std::vector<std::uint8_t> scales,
                                    std::optional<double> tensor_decode_scale) {
    QuantizedTensor q(rows, cols, format, layout);
    if (packed_codes.size() != q.codes_.size()) throw FormatError("packed code count does not match shape");
    if (scales.size() != q.scales_.size()) throw FormatError("block scale count does not match layout");
    if (format.has_tensor_scale != tensor_decode_scale.has_value())
      throw FormatError("tensor scale presence does not match format");
    if (tensor_decode_scale && !(std::isfinite(*tensor_decode_scale) && *tensor_decode_scale > 0.0))
      throw FormatError("tensor decode scale must be finite and positive");
    if ((rows * cols) % 2 == 1 && (packed_codes.back() & 0xF0u) != 0)
      throw FormatError("unused high nibble of the last code byte must be zero");
    for (std::uint8_t s : scales) {
      const bool bad = format.scale_codec == ScaleCodec::E4M3 ? (is_nan(E4M3{s}) || (s & 0x80u)) : s == 0xFF;
      if (bad) throw FormatError("invalid block scale code");
    }
    q.codes_ = std::move(packed_codes);
    q.scales_ = std::move(scales);
    q.tensor_decode_scale_ = tensor_decode_scale;
    return q;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  const FormatSpec& format() const noexcept { return format_; }
  const ScalingLayout& layout() const noexcept { return layout_; }
  BlockMap block_map() const { return BlockMap(rows_, cols_, layout_); }

  E2M1 code(std::size_t r, std::size_t c) const noexcept {
    const std::size_t i = r * cols_ + c;
    return E2M1{static_cast<std::uint8_t>((codes_[i / 2] >> (4 * (i % 2))) & 0xFu)};
  }
  void set_code(std::size_t r, std::size_t c, E2M1 v) noexcept {
    const std::size_t i = r * cols_ + c;
    const unsigned shift = 4 * (i % 2);
    codes_[i / 2] = static_cast<std::uint8_t>((codes_[i / 2] & ~(0xFu << shift)) | ((v.bits & 0xFu) << shift));
  }

  std::span<const std::uint8_t> packed_codes() const noexcept { return codes_; }
  std::span<const std::uint8_t> scale_codes() const noexcept { return scales_; }
  std::size_t block_count() const noexcept { return scales_.size(); }
  void set_scale_code(std::size_t b, std::uint8_t bits) noexcept { scales_[b] = bits; }

  double block_decode_scale(std::size_t b) const {
    return format_.scale_codec == ScaleCodec::E4M3 ? decode_e4m3(E4M3{scales_[b]}) : decode_ue8m0(UE8M0{scales_[b]});
  }

  std::optional<double> tensor_decode_scale() const noexcept { return tensor_decode_scale_; }
  void set_tensor_decode_scale(double s) noexcept { tensor_decode_scale_ = s; }

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;

 private:
  std::size_t rows_, cols_;
  FormatSpec format_;
  ScalingLayout layout_;
  std::vector<std::uint8_t> codes_;
  std::vector<std::uint8_t> scales_;
  std::optional<double> tensor_decode_scale_;
};

struct BlockStats {
  std::vector<double> block_amax;
  double tensor_amax = 0.0;
};

inline BlockStats compute_block_stats(const Matrix& x, const BlockMap& map) {
  BlockStats s;
  s.block_amax.assign(map.count(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double a = std::fabs(x(r, c));
      double& m = s.block_amax[map.block_of(r, c)];
      m = std::fmax(m, a);
      s.tensor_amax = std::fmax(s.tensor_amax, a);
    }
  return s;
}

/// Row-major index of the first non-finite element, if any.
inline std::optional<std::size_t> first_non_finite(const Matrix& x) noexcept {
  const auto v = x.values();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) return i;
  return std::nullopt;
}

struct GlobalScale {
  double encode = 1.0;
  double decode = 1.0;
};

/// s_enc = 6 * 448 / amax_x. Throws DegenerateTensor for amax_x == 0.
inline GlobalScale global_encode_scale(double tensor_amax) {
  if (tensor_amax == 0.0) throw DegenerateTensor("global_encode_scale: tensor amax is zero");
  if (!(tensor_amax > 0.0) || !std::isfinite(tensor_amax))
    throw RangeError("global_encode_scale: amax must be finite and positive");
  const double enc = kE2M1Max * kE4M3Max / tensor_amax;
  if (!std::isfinite(enc)) throw RangeError("global_encode_scale: amax too small to scale");
  return {enc, 1.0 / enc};
}

struct NvBlockScale {
  E4M3 decode_code;     // s_dec_b as stored
  double encode = 0.0;  // s_enc_b
};

/// Block scale for NVFP4. Blocks whose scale is zero or underflows E4M3 get
/// the smallest positive E4M3 value so that s_enc_b stays finite.
inline NvBlockScale nvfp4_block_scale(double block_amax, const GlobalScale& global) {
  E4M3 code = encode_e4m3(block_amax / kE2M1Max * global.encode);
  if (code.bits == 0) code = E4M3{kE4M3MinPositiveBits};
  return {code, 1.0 / (decode_e4m3(code) * global.decode)};
}

namespace detail {

inline void require_finite_matrix(const Matrix& x, const char* what) {
  if (auto i = first_non_finite(x)) {
    throw InvalidInput(std::string(what) + ": non-finite value at index " + std::to_string(*i) + " (row " +
                       std::to_string(*i / x.cols()) + ", col " + std::to_string(*i % x.cols()) + ")");
  }
}

inline void require_block_len(const ScalingLayout& layout, const FormatSpec& f, const char* what) {
  if (layout.block_len != f.block_len)
    throw ShapeError(std::string(what) + ": layout block length " + std::to_string(layout.block_len) +
                     " does not match format block length " + std::to_string(f.block_len));
}

}  // namespace detail

/// Quantize to NVFP4. The stochastic counter of element (r, c) is its
/// row-major linear index r * cols + c.
inline QuantizedTensor quantize_nvfp4(const Matrix& x, ScalingLayout layout, const RoundingMode& mode) {
  constexpr FormatSpec fmt = FormatSpec::nvfp4();
  detail::require_block_len(layout, fmt, "quantize_nvfp4");
  detail::require_finite_matrix(x, "quantize_nvfp4");
  QuantizedTensor q(x.rows(), x.cols(), fmt, layout);
  const BlockMap map = q.block_map();
  const BlockStats stats = compute_block_stats(x, map);
  if (stats.tensor_amax == 0.0) {
    q.set_tensor_decode_scale(1.0);
    return q;  // codes and scales are all zero
  }
  const GlobalScale global = global_encode_scale(stats.tensor_amax);
  q.set_tensor_decode_scale(global.decode);
  for (std::size_t b = 0; b < map.count(); ++b) {
    const NvBlockScale s = nvfp4_block_scale(stats.block_amax[b], global);
    q.set_scale_code(b, s.decode_code.bits);
    const BlockExtent e = map.extent(b);
    for (std::size_t r = e.row_begin; r < e.row_end; ++r)
      for (std::size_t c = e.col_begin; c < e.col_end; ++c)
        q.set_code(r, c, encode_e2m1(x(r, c) * s.encode, mode, r * x.cols() + c));
  }
  return q;
}

/// Quantize to MXFP4 with round-up power-of-two block scales.
inline QuantizedTensor quantize_mxfp4(const Matrix& x, ScalingLayout layout, const RoundingMode& mode) {
  constexpr FormatSpec fmt = FormatSpec::mxfp4();
  detail::require_block_len(layout, fmt, "quantize_mxfp4");
  detail::require_finite_matrix(x, "quantize_mxfp4");
  QuantizedTensor q(x.rows(), x.cols(), fmt, layout);
  const BlockMap map = q.block_map();
  const BlockStats stats = compute_block_stats(x, map);
  constexpr double kMinScale = 0x1.0p-127;
  for (std::size_t b = 0; b < map.count(); ++b) {
    const double wanted = std::fmax(stats.block_amax[b] / kE2M1Max, kMinScale);
    const UE8M0 code = encode_ue8m0_roundup(wanted);
    q.set_scale_code(b, code.bits);
    const double scale = decode_ue8m0(code);
    const BlockExtent e = map.extent(b);
    for (std::size_t r = e.row_begin; r < e.row_end; ++r)
      for (std::size_t c = e.col_begin; c < e.col_end; ++c)
        q.set_code(r, c, encode_e2m1(x(r, c) / scale, mode, r * x.cols() + c));
  }
  return q;
}

inline QuantizedTensor quantize(const Matrix& x, FormatSpec format, ScalingLayout layout, const RoundingMode& mode) {
  return format.kind == FormatKind::NVFP4 ? quantize_nvfp4(x, layout, mode) : quantize_mxfp4(x, layout, mode);
}

/// Layout of `kind` with the block length of `format`.
constexpr ScalingLayout layout_for(FormatSpec format, LayoutKind kind) noexcept { return {kind, format.block_len}; }

inline Matrix dequantize(const QuantizedTensor& q) {
  Matrix out(q.rows(), q.cols());
  const BlockMap map = q.block_map();
  const double global = q.tensor_decode_scale().value_or(1.0);
  for (std::size_t b = 0; b < map.count(); ++b) {
    const double s = q.block_decode_scale(b);
    const BlockExtent e = map.extent(b);
    for (std::size_t r = e.row_begin; r < e.row_end; ++r)
      for (std::size_t c = e.col_begin; c < e.col_end; ++c)
        out(r, c) = decode_e2m1(q.code(r, c)) * (s * global);
  }
  return out;
}

}  // namespace fp4
