#pragma once

#include <stdexcept>
#include <string>

namespace shellopt {

/// Malformed or inconsistent input data (mesh files, thickness files).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown: failed factorization, infeasible iterate, exhausted
/// line search.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Evaluation outside the domain of a barrier or energy (log of a
/// non-positive argument, inverted element). Line searches catch this to
/// reject a trial step.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace shellopt
