#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hidden_ode {

/// Dimension or configuration mismatch detected before any numerics run.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A matrix that must be symmetric positive definite failed its Cholesky
/// factorization. Carries the recursion step at which it happened (-1 when
/// the failure is not tied to a step).
class CovarianceError : public NumericalError {
 public:
  CovarianceError(const std::string& what, long step)
      : NumericalError(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

/// Malformed text input (CSV, JSON). `line` is 1-based, 0 if unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace hidden_ode
