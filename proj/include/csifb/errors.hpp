// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace csifb {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit the kernel contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Misuse of a GradTape (unknown variable, unregistered parameter slot).
class TapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or a diverging optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Entropy-coded payload that cannot be decoded (truncated, inconsistent header).
class DecodeError : public Error {
 public:
  using Error::Error;
};

}  // namespace csifb
