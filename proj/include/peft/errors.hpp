#pragma once

#include <stdexcept>
#include <string>

namespace peft {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, divergence, failed gradient checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, adapter spec or CLI flags.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff tape (e.g. backward run twice).
class GraphError : public Error {
 public:
  using Error::Error;
};

}  // namespace peft
