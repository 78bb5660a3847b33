// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fp4 {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value handed to a quantizer or codec.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Value outside the domain of a codec (e.g. UE8M0 of a non-positive number).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Bit pattern that has no numeric meaning (E4M3 NaN, UE8M0 0xFF).
class InvalidCode : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Tensor-wide amax of zero where a scale must be derived from it.
class DegenerateTensor : public Error {
 public:
  using Error::Error;
};

/// Raised for 1D-scaled tensors: a transposed view would change the
/// dot-product dimension, so the caller must requantize.
class NotTransposable : public Error {
 public:
  using Error::Error;
};

/// Malformed tensor container.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration that violates the schema. Carries every
/// violation found, not just the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "invalid configuration";
    for (const auto& s : v) out += "\n  " + s;
    return out;
  }

  std::vector<std::string> violations_;
};

}  // namespace fp4
