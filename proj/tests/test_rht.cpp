// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fp4/block_quant.hpp"
#include "fp4/metrics.hpp"
#include "fp4/rht.hpp"
#include "support.hpp"

namespace fp4 {
namespace {

using testing::Gen;

constexpr double kEps = std::numeric_limits<double>::epsilon();

double orthogonality_defect(const HadamardMatrix& h) {
  const Matrix hht = matmul_nt(h.matrix(), h.matrix());
  double worst = 0.0;
  for (std::size_t i = 0; i < h.dim(); ++i)
    for (std::size_t j = 0; j < h.dim(); ++j) worst = std::max(worst, std::fabs(hht(i, j) - (i == j ? 1.0 : 0.0)));
  return worst;
}

TEST(BuildHadamard, BaseCase) {
  const HadamardMatrix h = build_hadamard({2, 0, false});
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_EQ(h(0, 0), r);
  EXPECT_EQ(h(0, 1), r);
  EXPECT_EQ(h(1, 0), r);
  EXPECT_EQ(h(1, 1), -r);
}

TEST(BuildHadamard, MatchesKroneckerRecursion) {
  // H_d = H_2 (x) H_{d/2}, built independently.
  Matrix ref(1, 1, 1.0);
  for (std::size_t d = 2; d <= 128; d *= 2) {
    Matrix next(d, d);
    const double r = 1.0 / std::sqrt(2.0);
    for (std::size_t i = 0; i < d / 2; ++i)
      for (std::size_t j = 0; j < d / 2; ++j) {
        next(i, j) = r * ref(i, j);
        next(i, j + d / 2) = r * ref(i, j);
        next(i + d / 2, j) = r * ref(i, j);
        next(i + d / 2, j + d / 2) = -r * ref(i, j);
      }
    ref = next;
    const HadamardMatrix h = build_hadamard({d, 0, false});
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) ASSERT_NEAR(h(i, j), ref(i, j), 1e-15) << d;
  }
}

TEST(BuildHadamard, RejectsNonPowersOfTwo) {
  for (std::size_t d : {0u, 1u, 3u, 12u, 100u}) EXPECT_THROW(build_hadamard({d, 0, true}), ShapeError) << d;
}

TEST(BuildHadamard, SignsFlipRows) {
  const HadamardSpec spec{16, 1234, true};
  const HadamardMatrix h = build_hadamard(spec);
  const HadamardMatrix plain = build_hadamard({16, 0, false});
  const std::vector<int> s = sign_vector(spec);
  int flipped = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    ASSERT_TRUE(s[i] == 1 || s[i] == -1);
    flipped += s[i] < 0;
    for (std::size_t j = 0; j < 16; ++j) ASSERT_EQ(h(i, j), s[i] * plain(i, j));
  }
  EXPECT_GT(flipped, 0);
  EXPECT_LT(flipped, 16);
}

TEST(BuildHadamardProperty, Orthogonality) {
  for (std::size_t d : {2u, 4u, 8u, 16u, 32u, 64u, 128u, 256u})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      for (bool randomized : {false, true}) {
        const HadamardMatrix h = build_hadamard({d, seed, randomized});
        ASSERT_LE(orthogonality_defect(h), 8.0 * d * kEps) << d << ' ' << seed;
        ASSERT_LE(orthogonality_defect(h), 1e-12);
      }
    }
}

TEST(BuildHadamardProperty, SeedDeterminism) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_EQ(sign_vector({64, seed, true}), sign_vector({64, seed, true}));
    EXPECT_TRUE(build_hadamard({64, seed, true}).matrix() == build_hadamard({64, seed, true}).matrix());
  }
  EXPECT_NE(sign_vector({64, 1, true}), sign_vector({64, 2, true}));
}

TEST(BuildHadamard, FrozenSignVector) {
  // Regression lock of the sign derivation (first 16 signs for seed 7).
  const std::vector<int> s = sign_vector({16, 7, true});
  const std::vector<int> again = sign_vector({16, 7, true});
  EXPECT_EQ(s, again);
  std::vector<int> expect(16);
  const RandomStream stream{7, kSignVectorStream};
  for (std::size_t i = 0; i < 16; ++i) expect[i] = (stream.bits(i) % 2 == 0) ? 1 : -1;
  EXPECT_EQ(s, expect);
}

TEST(ApplyRht, ZerosStayZero) {
  const Matrix y = apply_rht_tiled(Matrix(3, 32), HadamardSpec{16, 3, true});
  EXPECT_TRUE(y == Matrix(3, 32));
}

TEST(ApplyRht, SpikeSpreadsEvenly) {
  Matrix x(1, 16);
  x(0, 0) = 8.0;
  const Matrix y = apply_rht_tiled(x, HadamardSpec{16, 5, true});
  for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(std::fabs(y(0, j)), 2.0, 1e-15);
}

TEST(ApplyRht, RejectsIndivisibleWidth) {
  EXPECT_THROW(apply_rht_tiled(Matrix(2, 24), HadamardSpec{16, 0, true}), ShapeError);
}

TEST(ApplyRht, TilesAreIndependent) {
  Gen g(201);
  const Matrix x = g.gaussian(4, 64);
  const Matrix y = apply_rht_tiled(x, HadamardSpec{16, 1, true});
  for (std::size_t tile = 0; tile < 4; ++tile) {
    Matrix part(4, 16);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 16; ++c) part(r, c) = x(r, tile * 16 + c);
    const Matrix py = apply_rht_tiled(part, HadamardSpec{16, 1, true});
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 16; ++c) ASSERT_EQ(py(r, c), y(r, tile * 16 + c));
  }
}

TEST(ApplyRhtProperty, PreservesFrobeniusNorm) {
  Gen g(202);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = std::size_t{2} << g.index(7);
    const Matrix x = g.spiky(1 + g.index(10), d * (1 + g.index(4)), 50.0, 0.05);
    const Matrix y = apply_rht_tiled(x, HadamardSpec{d, g.bits(), true});
    ASSERT_NEAR(frobenius_norm(y), frobenius_norm(x), 1e-10 * frobenius_norm(x));
  }
}

TEST(ApplyRhtProperty, IsLinear) {
  Gen g(203);
  const HadamardSpec spec{32, 11, true};
  for (int t = 0; t < 20; ++t) {
    const Matrix a = g.gaussian(3, 64), b = g.gaussian(3, 64);
    Matrix sum(3, 64);
    for (std::size_t i = 0; i < sum.size(); ++i) sum.values()[i] = 2.0 * a.values()[i] + b.values()[i];
    const Matrix ya = apply_rht_tiled(a, spec), yb = apply_rht_tiled(b, spec), ys = apply_rht_tiled(sum, spec);
    for (std::size_t i = 0; i < sum.size(); ++i)
      ASSERT_NEAR(ys.values()[i], 2.0 * ya.values()[i] + yb.values()[i], 1e-12);
  }
}

TEST(RhtPairIdentity, Examples) {
  Matrix eye(64, 64);
  for (std::size_t i = 0; i < 64; ++i) eye(i, i) = 1.0;
  EXPECT_LT(rht_pair_identity_check(eye, eye, HadamardSpec{16, 1, true}), 1e-10);
  Gen g(204);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = g.gaussian(64, 64), b = g.gaussian(64, 64);
    EXPECT_LT(rht_pair_identity_check(a, b, HadamardSpec{16, g.bits(), true}), 1e-8);
  }
}

TEST(RhtPairIdentity, MismatchedSeedsBreakCancellation) {
  Gen g(205);
  const Matrix a = g.gaussian(64, 64), b = g.gaussian(64, 64);
  EXPECT_GT(rht_pair_identity_check(a, b, HadamardSpec{16, 1, true}, HadamardSpec{16, 2, true}), 1.0);
}

TEST(RhtProperty, GaussianizesHeavyTailedTiles) {
  // One entry of 100 in an otherwise standard normal 16-tile: the rotated
  // tile's kurtosis must drop in at least 99% of 1000 trials.
  Gen g(206);
  int lower = 0;
  for (int t = 0; t < 1000; ++t) {
    Matrix x = g.gaussian(1, 16);
    x(0, g.index(16)) = 100.0;
    const Matrix y = apply_rht_tiled(x, HadamardSpec{16, static_cast<std::uint64_t>(t), true});
    lower += kurtosis(y.values()) < kurtosis(x.values());
  }
  EXPECT_GE(lower, 990);
}

TEST(RhtProperty, ImprovesSqnrWhenSpikeStarvesBlockScales) {
  // A spike of 1e7 drives the per-tensor scale so low that ordinary blocks
  // need E4M3 scales below the subnormal range. Rotation cuts the tensor amax
  // by 4 at d = 16, which keeps those blocks representable.
  Gen g(207);
  for (int t = 0; t < 20; ++t) {
    Matrix x = g.gaussian(16, 64);
    x(g.index(16), g.index(64)) = 1e7;
    const Matrix y = apply_rht_tiled(x, HadamardSpec{16, static_cast<std::uint64_t>(t), true});
    const double before = quantization_stats(x, quantize_nvfp4(x, ScalingLayout::rows(), NearestEven{})).sqnr_db;
    const double after = quantization_stats(y, quantize_nvfp4(y, ScalingLayout::rows(), NearestEven{})).sqnr_db;
    EXPECT_GT(after, before);
  }
}

TEST(RhtProperty, DoesNotImproveSqnrOfModerateSpikes) {
  // With one scale per 16 elements a moderate spike only costs its own
  // block, and spreading it over that block raises the error instead.
  Gen g(208);
  for (int t = 0; t < 20; ++t) {
    Matrix x = g.gaussian(16, 64);
    for (std::size_t r = 0; r < 16; ++r) x(r, g.index(64)) = 80.0;
    const Matrix y = apply_rht_tiled(x, HadamardSpec{16, 3, true});
    const double before = quantization_stats(x, quantize_nvfp4(x, ScalingLayout::rows(), NearestEven{})).sqnr_db;
    const double after = quantization_stats(y, quantize_nvfp4(y, ScalingLayout::rows(), NearestEven{})).sqnr_db;
    EXPECT_LT(after, before);
  }
}

}  // namespace
}  // namespace fp4
