// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// FP4T tensor container, little-endian throughout.
//
//   offset  size  field
//        0     4  magic "FP4T"
//        4     1  version (1)
//        5     1  dtype: 1 wide, 2 quantized
//        6     1  format: 0 (wide), 1 NVFP4, 2 MXFP4
//        7     1  layout: 0 (wide), 1 rows, 2 cols, 3 square
//        8     1  block length (0 for wide)
//        9     1  flags: bit 0 = tensor decode scale present
//       10     6  reserved, zero
//       16     8  rows (u64)
//       24     8  cols (u64)
//       32     8  tensor decode scale (f64; 0 when absent)
//       40        payload
//
// Wide payload: rows*cols binary64 values, row-major. Quantized payload:
// ceil(rows*cols/2) packed code bytes (low nibble first), then one scale
// byte per block in block-index order.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <string>
#include <system_error>
#include <variant>
#include <vector>

#include "fp4/block_quant.hpp"
#include "fp4/errors.hpp"
#include "fp4/matrix.hpp"

namespace fp4 {

inline constexpr std::array<char, 4> kTensorMagic{'F', 'P', '4', 'T'};
inline constexpr std::uint8_t kTensorFileVersion = 1;
inline constexpr std::size_t kTensorHeaderSize = 40;

enum class TensorDtype : std::uint8_t { Wide = 1, Quantized = 2 };

using TensorData = std::variant<Matrix, QuantizedTensor>;

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::size_t at, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

inline std::uint64_t get_u64(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{in[at + i]} << (8 * i);
  return v;
}

inline void check_shape(std::uint64_t rows, std::uint64_t cols) {
  if (rows == 0 || cols == 0) throw FormatError("tensor file: zero dimension");
  constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 40;
  if (rows > kMaxElements || cols > kMaxElements / rows) throw FormatError("tensor file: shape too large");
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_tensor(const TensorData& t) {
  std::vector<std::uint8_t> out(kTensorHeaderSize, 0);
  for (std::size_t i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(kTensorMagic[i]);
  out[4] = kTensorFileVersion;
  if (const Matrix* m = std::get_if<Matrix>(&t)) {
    detail::check_shape(m->rows(), m->cols());
    out[5] = static_cast<std::uint8_t>(TensorDtype::Wide);
    detail::put_u64(out, 16, m->rows());
    detail::put_u64(out, 24, m->cols());
    out.resize(kTensorHeaderSize + 8 * m->size());
    for (std::size_t i = 0; i < m->size(); ++i)
      detail::put_u64(out, kTensorHeaderSize + 8 * i, std::bit_cast<std::uint64_t>(m->values()[i]));
    return out;
  }
  const QuantizedTensor& q = std::get<QuantizedTensor>(t);
  detail::check_shape(q.rows(), q.cols());
  out[5] = static_cast<std::uint8_t>(TensorDtype::Quantized);
  out[6] = static_cast<std::uint8_t>(q.format().kind);
  out[7] = static_cast<std::uint8_t>(q.layout().kind);
  out[8] = static_cast<std::uint8_t>(q.layout().block_len);
  out[9] = q.tensor_decode_scale() ? 1 : 0;
  detail::put_u64(out, 16, q.rows());
  detail::put_u64(out, 24, q.cols());
  detail::put_u64(out, 32, std::bit_cast<std::uint64_t>(q.tensor_decode_scale().value_or(0.0)));
  const auto& codes = q.packed_codes();
  const auto& scales = q.scale_codes();
  out.resize(kTensorHeaderSize + codes.size() + scales.size());
  std::copy(codes.begin(), codes.end(), out.begin() + kTensorHeaderSize);
  std::copy(scales.begin(), scales.end(), out.begin() + kTensorHeaderSize + codes.size());
  return out;
}

/// Strict parse: every header field and the exact payload length are checked.
inline TensorData deserialize_tensor(const std::vector<std::uint8_t>& in) {
  if (in.size() < kTensorHeaderSize) throw FormatError("tensor file: truncated header");
  for (std::size_t i = 0; i < 4; ++i)
    if (in[i] != static_cast<std::uint8_t>(kTensorMagic[i])) throw FormatError("tensor file: bad magic");
  if (in[4] != kTensorFileVersion) throw FormatError("tensor file: unsupported version " + std::to_string(in[4]));
  for (std::size_t i = 10; i < 16; ++i)
    if (in[i] != 0) throw FormatError("tensor file: reserved header bytes must be zero");
  const std::uint64_t rows = detail::get_u64(in, 16);
  const std::uint64_t cols = detail::get_u64(in, 24);
  detail::check_shape(rows, cols);
  const std::uint64_t n = rows * cols;
  const double s_dec = std::bit_cast<double>(detail::get_u64(in, 32));

  if (in[5] == static_cast<std::uint8_t>(TensorDtype::Wide)) {
    if (in[6] != 0 || in[7] != 0 || in[8] != 0 || in[9] != 0 || detail::get_u64(in, 32) != 0)
      throw FormatError("tensor file: wide tensor with quantization metadata");
    if (in.size() != kTensorHeaderSize + 8 * n) throw FormatError("tensor file: payload length does not match shape");
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(detail::get_u64(in, kTensorHeaderSize + 8 * i));
    return Matrix(rows, cols, std::move(v));
  }
  if (in[5] != static_cast<std::uint8_t>(TensorDtype::Quantized))
    throw FormatError("tensor file: unknown dtype " + std::to_string(in[5]));
  if (in[6] != static_cast<std::uint8_t>(FormatKind::NVFP4) && in[6] != static_cast<std::uint8_t>(FormatKind::MXFP4))
    throw FormatError("tensor file: unknown format " + std::to_string(in[6]));
  const FormatSpec format = FormatSpec::of(static_cast<FormatKind>(in[6]));
  if (in[7] < 1 || in[7] > 3) throw FormatError("tensor file: unknown layout " + std::to_string(in[7]));
  if (in[8] != format.block_len) throw FormatError("tensor file: block length does not match format");
  if ((in[9] & ~1u) != 0) throw FormatError("tensor file: unknown flags");
  const bool has_scale = in[9] & 1u;
  if (!has_scale && detail::get_u64(in, 32) != 0) throw FormatError("tensor file: stray tensor decode scale");
  const ScalingLayout layout{static_cast<LayoutKind>(in[7]), in[8]};
  const std::size_t code_bytes = (n + 1) / 2;
  const std::size_t blocks = BlockMap(rows, cols, layout).count();
  if (in.size() != kTensorHeaderSize + code_bytes + blocks)
    throw FormatError("tensor file: payload length does not match shape and layout");
  auto first = in.begin() + kTensorHeaderSize;
  std::vector<std::uint8_t> codes(first, first + static_cast<std::ptrdiff_t>(code_bytes));
  std::vector<std::uint8_t> scales(first + static_cast<std::ptrdiff_t>(code_bytes), in.end());
  return QuantizedTensor::from_parts(rows, cols, format, layout, std::move(codes), std::move(scales),
                                     has_scale ? std::optional<double>(s_dec) : std::nullopt);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading '" + path + "'");
  return bytes;
}

/// Write through a temporary file in the same directory, then rename.
inline void write_file_atomic(const std::string& path, const void* data, std::size_t size) {
  const std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create '" + tmp.string() + "'");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    out.flush();
    if (!out) throw IoError("error writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename onto '" + path + "'");
  }
}

inline void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

inline TensorData read_tensor_file(const std::string& path) { return deserialize_tensor(read_file_bytes(path)); }

inline void write_tensor_file(const std::string& path, const TensorData& t) {
  const std::vector<std::uint8_t> bytes = serialize_tensor(t);
  write_file_atomic(path, bytes.data(), bytes.size());
}

}  // namespace fp4
