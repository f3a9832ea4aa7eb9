#pragma once

#include <stdexcept>
#include <string>

namespace restrain {

// Malformed arguments or data that violate a documented precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Missing or inconsistent configuration (unknown keys, absent table entries, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when training produces a non-finite loss or gradient.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace restrain
