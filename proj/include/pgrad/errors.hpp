#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pgrad {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad value passed to an operation (non-finite input, empty batch, ...).
struct InvalidInputError : Error {
  using Error::Error;
};

/// Bad configuration value (k <= 0, alpha out of range, ...).
struct InvalidConfigError : Error {
  using Error::Error;
};

/// Dimension mismatch between containers that must be shape-congruent.
struct ShapeError : Error {
  using Error::Error;
};

/// Class index out of range.
struct IndexError : Error {
  using Error::Error;
};

/// Malformed data file (bad magic, truncation, count mismatch).
struct FormatError : Error {
  using Error::Error;
};

/// Non-finite loss or parameters during training; carries the epoch it was detected in.
struct DivergenceError : Error {
  std::size_t epoch;
  DivergenceError(const std::string& msg, std::size_t ep) : Error(msg), epoch(ep) {}
};

/// A randomized check could not realize its required setup.
struct SetupError : Error {
  using Error::Error;
};

/// An iterative solver failed to converge within its budget.
struct ConvergenceError : Error {
  using Error::Error;
};

}  // namespace pgrad
