#pragma once

#include <stdexcept>
#include <string>

namespace vfg {

/// Bad invocation or malformed arguments (CLI exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data, graph specs or checkpoints that fail validation (exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf values, shape violations inside the numeric core (exit code 3).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vfg
