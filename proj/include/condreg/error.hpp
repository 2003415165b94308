#pragma once

#include <stdexcept>
#include <string>

namespace condreg {

// Bad arguments, shape mismatches, malformed configs.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Missing files, short payloads, write failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values produced during optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace condreg
