#pragma once

#include <stdexcept>
#include <string>

namespace sacfl {

// Base for all library errors so callers can catch everything from one place.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor / layer shape mismatches.
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Bad user-supplied arguments or configuration values.
struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Broken internal contract (stale cache, layout mismatch, duplicate pool key).
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Missing pool / map entry.
struct LookupError : Error {
  explicit LookupError(const std::string& msg) : Error(msg) {}
};

// Drift-threshold calibration could not separate boundary from within-task diffs.
struct CalibrationError : Error {
  explicit CalibrationError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf surfaced during a run.
struct NumericalError : Error {
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

}  // namespace sacfl
