#pragma once

#include <stdexcept>
#include <string>

namespace ledetr {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN (or otherwise unusable) values reached a numeric kernel.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// The neighborhood window does not fit in the feature map.
class WindowError : public Error {
 public:
  using Error::Error;
};

/// Model or CLI configuration is invalid (unknown names, bad ranges, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ledetr
