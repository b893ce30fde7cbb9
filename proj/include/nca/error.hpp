// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace nca {

/// Base of every error raised by the library. Each subclass maps onto one of
/// the CLI exit codes (see tools/commands.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf escaped a numeric operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// The rollout state (or a gradient) went non-finite mid-computation.
class DivergenceError : public NumericError {
 public:
  explicit DivergenceError(const std::string& what, int step = -1)
      : NumericError(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint does not match the expected model (bad kernels, meta mismatch).
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace nca
