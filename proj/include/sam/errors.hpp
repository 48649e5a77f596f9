#pragma once

#include <stdexcept>
#include <string>

namespace sam {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or axis mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range scalar argument (temperature, class index, proportion...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition on operand contents was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or Inf from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, malformed or unwritable file.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sam
