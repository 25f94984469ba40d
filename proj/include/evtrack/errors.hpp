#pragma once

#include <stdexcept>
#include <string>

namespace evtrack {

// Malformed file contents (bad magic, missing CSV column, truncation).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed input whose values violate a documented invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape mismatch.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration (model/training/CLI), maps to usage exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse: a precondition of an operation does not hold.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// LRP-0 hit a (near-)zero denominator; the epsilon rule resolves this.
class SingularDenominatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace evtrack
