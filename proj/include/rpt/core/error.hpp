#pragma once

#include <stdexcept>
#include <string>

namespace rpt {

// Exception hierarchy. Each category maps onto one CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Bad input, configuration or API misuse.
class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

/// Shape mismatch between operands.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// NaN/Inf encountered, or a gradient check failed.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace rpt
