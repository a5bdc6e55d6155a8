#pragma once

#include <stdexcept>
#include <string>

namespace decompkan {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible. No operation broadcasts implicitly.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter, range or option.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or insufficient input data (CSV contents, split sizes).
class DataError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN/Inf encountered during a numeric stage.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Broken internal contract, e.g. a backward call with a stale cache.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace decompkan
