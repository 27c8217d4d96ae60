#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace llqrsam {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NotSymmetricError : std::invalid_argument {
  NotSymmetricError(const std::string& what, double asymmetry)
      : std::invalid_argument(what), max_asymmetry(asymmetry) {}
  double max_asymmetry;
};

struct NotPositiveDefiniteError : std::domain_error {
  NotPositiveDefiniteError(const std::string& what, double value)
      : std::domain_error(what), eigenvalue(value) {}
  double eigenvalue;
};

/// Raised by the step rules when a loss or gradient stops being finite.
struct StepAborted : std::runtime_error {
  StepAborted(const std::string& what, std::size_t step_index)
      : std::runtime_error(what), step(step_index) {}
  std::size_t step;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace llqrsam
