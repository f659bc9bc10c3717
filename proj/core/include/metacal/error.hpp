#pragma once

#include <stdexcept>
#include <string>

namespace metacal {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array or matrix dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument value was violated (empty batch, bad rate).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Input data is unreadable, malformed or insufficient for the request.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Statistics cannot be formed (constant channel, constant truth).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or unusable experiment/training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace metacal
