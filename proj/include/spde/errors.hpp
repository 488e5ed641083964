#pragma once

#include <stdexcept>
#include <string>

namespace spde {

/// Invalid model or operator parameters (outside the admissible domain).
class ParameterDomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mismatched grids, wrong field sizes, bad indices.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Experiment configuration could not be parsed or violates an invariant.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced non-finite values or failed to converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Quadrature did not reach the requested tolerance.
class IntegrationError : public NumericalError {
 public:
  IntegrationError(const std::string& what, double value, double error_estimate)
      : NumericalError(what + " (value " + std::to_string(value) + ", error estimate " +
                       std::to_string(error_estimate) + ")"),
        value_(value),
        error_estimate_(error_estimate) {}

  double value() const noexcept { return value_; }
  double error_estimate() const noexcept { return error_estimate_; }

 private:
  double value_;
  double error_estimate_;
};

/// Fit inputs that cannot produce a meaningful estimate (e.g. non-positive moments).
class DegenerateDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spde
