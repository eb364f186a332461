#pragma once

#include <stdexcept>
#include <string>

namespace panodream {

// Error categories surfaced by the library. All derive from std::runtime_error
// so callers that do not care about the category can catch one type.

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input data (class ids out of range, inconsistent images).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateProjectionError : GeometryError {
  using GeometryError::GeometryError;
};

struct NoContextError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AugmentationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace panodream
