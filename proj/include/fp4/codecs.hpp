// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar codecs for the narrow formats used by microscaled FP4:
//
//   E2M1  - 4-bit element format, values +-{0, 0.5, 1, 1.5, 2, 3, 4, 6}
//   E4M3  - 8-bit block-scale format (bias 7, subnormals, max 448,
//           S.1111.111 is NaN, no infinities)
//   UE8M0 - 8-bit unsigned power-of-two scale, 2^(bits - 127); 0xFF is NaN
//
// All functions are pure. Stochastic rounding draws from a counter-based
// stream, so a result depends only on (value, stream, counter).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <variant>

#include "fp4/counter_rng.hpp"
#include "fp4/errors.hpp"

namespace fp4 {

struct E2M1 {
  std::uint8_t bits = 0;  // low nibble: s.ee.m
  friend constexpr bool operator==(E2M1, E2M1) = default;
};

struct E4M3 {
  std::uint8_t bits = 0;
  friend constexpr bool operator==(E4M3, E4M3) = default;
};

struct UE8M0 {
  std::uint8_t bits = 0;
  friend constexpr bool operator==(UE8M0, UE8M0) = default;
};

struct NearestEven {};

struct Stochastic {
  RandomStream stream;
};

using RoundingMode = std::variant<NearestEven, Stochastic>;

inline constexpr double kE2M1Max = 6.0;
inline constexpr double kE4M3Max = 448.0;
inline constexpr double kE4M3MinSubnormal = 0x1.0p-9;
inline constexpr std::uint8_t kE4M3MaxBits = 0x7E;
inline constexpr std::uint8_t kE4M3MinPositiveBits = 0x01;
/// Unit roundoff of E4M3 normals (3 mantissa bits).
inline constexpr double kE4M3UnitRoundoff = 0x1.0p-4;

/// Positive E2M1 magnitudes indexed by the low three code bits (ee.m).
inline constexpr std::array<double, 8> kE2M1Magnitudes{0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};

constexpr double decode_e2m1(E2M1 c) noexcept {
  const double m = kE2M1Magnitudes[c.bits & 0x7u];
  return (c.bits & 0x8u) ? -m : m;
}

namespace detail {

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw InvalidInput(std::string(what) + ": non-finite input");
}

// Ties go to the even integer; independent of the floating-point environment.
inline double round_half_even(double v) noexcept {
  const double fl = std::floor(v);
  const double diff = v - fl;
  if (diff < 0.5) return fl;
  if (diff > 0.5) return fl + 1.0;
  return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

// Index of the largest E2M1 magnitude <= a, for a in [0, 6].
constexpr int e2m1_floor_index(double a) noexcept {
  int lo = 0;
  while (lo < 7 && kE2M1Magnitudes[lo + 1] <= a) ++lo;
  return lo;
}

}  // namespace detail

/// Encode a finite real to E2M1. Magnitudes above 6 saturate. Under
/// NearestEven ties resolve to the code whose mantissa bit is zero. Under
/// Stochastic the upper neighbour is chosen with probability
/// (|x| - lo) / (hi - lo), drawn at `counter` of the mode's stream.
/// The sign of x (including -0.0) is kept.
inline E2M1 encode_e2m1(double x, const RoundingMode& mode, std::uint64_t counter = 0) {
  detail::require_finite(x, "encode_e2m1");
  const std::uint8_t sign = std::signbit(x) ? 0x8u : 0x0u;
  const double a = std::min(std::fabs(x), kE2M1Max);
  int idx = detail::e2m1_floor_index(a);
  if (kE2M1Magnitudes[idx] != a) {
    const double lo = kE2M1Magnitudes[idx];
    const double hi = kE2M1Magnitudes[idx + 1];
    if (const auto* sr = std::get_if<Stochastic>(&mode)) {
      const double p_hi = (a - lo) / (hi - lo);
      if (sr->stream.uniform(counter) < p_hi) ++idx;
    } else {
      const double d_lo = a - lo;
      const double d_hi = hi - a;
      if (d_hi < d_lo || (d_hi == d_lo && (idx & 1) != 0)) ++idx;
    }
  }
  return E2M1{static_cast<std::uint8_t>(sign | idx)};
}

/// Stochastically round x onto the E2M1 grid and return the grid value.
inline double sr_round(double x, const RandomStream& stream, std::uint64_t counter) {
  return decode_e2m1(encode_e2m1(x, Stochastic{stream}, counter));
}

constexpr bool is_nan(E4M3 c) noexcept { return (c.bits & 0x7Fu) == 0x7Fu; }

/// Decode without the NaN check; NaN codes yield NaN.
inline double decode_e4m3_unchecked(E4M3 c) noexcept {
  if (is_nan(c)) return std::numeric_limits<double>::quiet_NaN();
  const int exp = (c.bits >> 3) & 0xF;
  const int man = c.bits & 0x7;
  const double mag = exp == 0 ? std::ldexp(static_cast<double>(man), -9)
                              : std::ldexp(static_cast<double>(8 + man), exp - 10);
  return (c.bits & 0x80u) ? -mag : mag;
}

inline double decode_e4m3(E4M3 c) {
  if (is_nan(c)) throw InvalidCode("decode_e4m3: NaN code");
  return decode_e4m3_unchecked(c);
}

/// Round-to-nearest-even onto the E4M3 grid, saturating at +-448.
inline E4M3 encode_e4m3(double x) {
  detail::require_finite(x, "encode_e4m3");
  const std::uint8_t sign = std::signbit(x) ? 0x80u : 0x00u;
  const double a = std::fabs(x);
  if (a >= kE4M3Max) return E4M3{static_cast<std::uint8_t>(sign | kE4M3MaxBits)};
  if (a == 0.0) return E4M3{sign};
  int e = 0;
  std::frexp(a, &e);  // a = f * 2^e, f in [0.5, 1)
  // Quantum of the binade holding a; subnormals share the quantum of the
  // first normal binade, which makes the bit pattern continuous across it.
  const int quantum_exp = std::max(e - 1, -6) - 3;
  const auto q = static_cast<int>(detail::round_half_even(std::ldexp(a, -quantum_exp)));
  const int bits = (quantum_exp + 10) * 8 + q - 8;
  if (bits >= kE4M3MaxBits) return E4M3{static_cast<std::uint8_t>(sign | kE4M3MaxBits)};
  return E4M3{static_cast<std::uint8_t>(sign | bits)};
}

inline double decode_ue8m0(UE8M0 c) {
  if (c.bits == 0xFF) throw InvalidCode("decode_ue8m0: NaN code");
  return std::ldexp(1.0, static_cast<int>(c.bits) - 127);
}

/// Smallest power of two >= x, clamped below at 2^-127.
inline UE8M0 encode_ue8m0_roundup(double x) {
  if (!(x > 0.0) || !std::isfinite(x) || x > 0x1.0p127)
    throw RangeError("encode_ue8m0_roundup: input must lie in (0, 2^127]");
  int e = 0;
  const double f = std::frexp(x, &e);
  int p = f == 0.5 ? e - 1 : e;
  p = std::max(p, -127);
  return UE8M0{static_cast<std::uint8_t>(p + 127)};
}

}  // namespace fp4
