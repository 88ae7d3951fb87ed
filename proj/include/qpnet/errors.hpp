#pragma once

#include <stdexcept>
#include <string>

namespace qpnet {

// Invalid architecture/shape/parameter combinations detected before any work runs.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Inputs that are structurally valid but violate a data precondition
// (out-of-range samples, empty tracks, length mismatches between streams).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// API misuse (e.g. backward on a non-scalar, reading a released buffer).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

// File format / filesystem failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// A measurement that cannot produce a meaningful value (e.g. all-zero PSD).
struct MeasurementError : std::runtime_error {
  explicit MeasurementError(const std::string& what) : std::runtime_error(what) {}
};

// Optimization blew up; carries the step index for diagnostics.
struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(const std::string& what, long long step) : std::runtime_error(what), step(step) {}
  long long step;
};

}  // namespace qpnet
