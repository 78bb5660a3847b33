// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "fp4/tensor_file.hpp"
#include "support.hpp"

namespace fp4 {
namespace {

using testing::Gen;

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fp4_test_" + name);
}

TEST(TensorFile, WideRoundTripIsBitwise) {
  Gen g(501);
  Matrix m = g.wide_range(7, 13, 60.0);
  m(0, 0) = -0.0;
  m(1, 1) = std::numeric_limits<double>::denorm_min();
  const TensorData back = deserialize_tensor(serialize_tensor(m));
  ASSERT_TRUE(std::holds_alternative<Matrix>(back));
  EXPECT_TRUE(bitwise_equal(std::get<Matrix>(back), m));
  EXPECT_EQ(serialize_tensor(m).size(), kTensorHeaderSize + 8 * m.size());
}

TEST(TensorFile, QuantizedRoundTripIsExact) {
  Gen g(502);
  for (FormatSpec f : {FormatSpec::nvfp4(), FormatSpec::mxfp4()})
    for (LayoutKind k : {LayoutKind::Rows1D, LayoutKind::Cols1D, LayoutKind::Square2D}) {
      const Matrix x = g.gaussian(1 + g.index(40), 1 + g.index(40));
      const QuantizedTensor q = quantize(x, f, layout_for(f, k), NearestEven{});
      const TensorData back = deserialize_tensor(serialize_tensor(q));
      ASSERT_TRUE(std::holds_alternative<QuantizedTensor>(back));
      EXPECT_TRUE(std::get<QuantizedTensor>(back) == q);
      EXPECT_TRUE(bitwise_equal(dequantize(std::get<QuantizedTensor>(back)), dequantize(q)));
    }
}

TEST(TensorFile, HeaderLayout) {
  const QuantizedTensor q = quantize_nvfp4(Matrix(2, 3, 1.0), ScalingLayout::rows(), NearestEven{});
  const std::vector<std::uint8_t> b = serialize_tensor(q);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "FP4T");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 2);
  EXPECT_EQ(b[6], 1);
  EXPECT_EQ(b[7], 1);
  EXPECT_EQ(b[8], 16);
  EXPECT_EQ(b[9], 1);
  EXPECT_EQ(b[16], 2);
  EXPECT_EQ(b[24], 3);
  EXPECT_EQ(b.size(), kTensorHeaderSize + 3 + 2);
}

TEST(TensorFile, StrictValidation) {
  const QuantizedTensor q = quantize_nvfp4(Matrix(4, 16, 1.0), ScalingLayout::rows(), NearestEven{});
  const std::vector<std::uint8_t> good = serialize_tensor(q);
  auto corrupt = [&](std::size_t at, std::uint8_t v) {
    std::vector<std::uint8_t> b = good;
    b[at] = v;
    return b;
  };
  EXPECT_THROW(deserialize_tensor({}), FormatError);
  EXPECT_THROW(deserialize_tensor(std::vector<std::uint8_t>(good.begin(), good.begin() + 39)), FormatError);
  EXPECT_THROW(deserialize_tensor(corrupt(0, 'X')), FormatError);
  EXPECT_THROW(deserialize_tensor(corrupt(4, 2)), FormatError);
  EXPECT_THROW(deserialize_tensor(corrupt(5, 9)), FormatError);
  EXPECT_THROW(deserialize_tensor(corrupt(6, 7)), FormatError);
  EXPECT_THROW(deserialize_tensor(corrupt(7, 4)), FormatError);
  EXPECT_THROW(deserialize_tensor(corrupt(8, 32)), FormatError);
  EXPECT_THROW(deserialize_tensor(corrupt(9, 2)), FormatError);
  EXPECT_THROW(deserialize_tensor(corrupt(12, 1)), FormatError);
  EXPECT_THROW(deserialize_tensor(corrupt(16, 5)), FormatError);  // rows change payload size
  EXPECT_THROW(deserialize_tensor(corrupt(16, 0)), FormatError);  // zero rows
  std::vector<std::uint8_t> longer = good;
  longer.push_back(0);
  EXPECT_THROW(deserialize_tensor(longer), FormatError);
  // a NaN block scale code is caught by the tensor's own validation
  EXPECT_THROW(deserialize_tensor(corrupt(good.size() - 1, 0x7F)), Error);
  // a wide header may not carry quantization metadata
  std::vector<std::uint8_t> wide = serialize_tensor(Matrix(1, 1, 2.0));
  wide[6] = 1;
  EXPECT_THROW(deserialize_tensor(wide), FormatError);
}

TEST(TensorFile, HugeShapeIsRejectedBeforeAllocation) {
  std::vector<std::uint8_t> b = serialize_tensor(Matrix(1, 1, 2.0));
  for (std::size_t i = 16; i < 32; ++i) b[i] = 0xFF;
  EXPECT_THROW(deserialize_tensor(b), FormatError);
}

TEST(TensorFile, DiskRoundTripAndIoErrors) {
  const auto path = temp_path("roundtrip.fp4t");
  Gen g(503);
  const Matrix m = g.gaussian(3, 5);
  write_tensor_file(path.string(), m);
  EXPECT_TRUE(bitwise_equal(std::get<Matrix>(read_tensor_file(path.string())), m));
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  std::filesystem::remove(path);
  EXPECT_THROW(read_tensor_file(path.string()), IoError);
  EXPECT_THROW(write_tensor_file("/nonexistent-dir/x.fp4t", m), IoError);
}

}  // namespace
}  // namespace fp4
