#pragma once

#include <stdexcept>
#include <string>

namespace sae {

/// Input violates a structural contract: shapes, identifiers, file schemas.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter lies outside the mathematical domain of an operation.
class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Numerical failure: separation, non-convergence, failed factorization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sae
