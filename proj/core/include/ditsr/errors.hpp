#pragma once

#include <stdexcept>
#include <string>

namespace ditsr {

/// Raised when caller-supplied arguments violate an operation's contract.
/// The CLI maps this family to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ResolutionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Non-finite values produced from finite inputs, or divergence during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the autodiff graph (double backward, non-differentiable loss).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace ditsr
