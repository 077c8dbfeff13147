#pragma once

#include <stdexcept>
#include <string>

namespace rscavity {

// Precondition violated by a caller-supplied argument.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of a function (x < 0 for W0, t <= 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class SingularMatrixError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Iterative method failed to reach its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No bracket could be found for a requested target value.
class RangeError : public std::range_error {
 public:
  using std::range_error::range_error;
};

// The parameter regime makes a closed-form prescription undefined
// (e.g. 1 - chi <= 0 for the empirical zero-bias penalty).
class DegenerateRegimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite integrand value at a quadrature node.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rscavity
