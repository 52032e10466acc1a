#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace aod {

// Error hierarchy. The CLI maps these onto exit codes: ValidationError and
// ParseError -> 2, NumericalError -> 3, anything else -> 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments, malformed configs, violated preconditions.
struct ValidationError : Error {
  using Error::Error;
};

struct InvalidBoxError : ValidationError {
  using ValidationError::ValidationError;
};

struct ShapeError : ValidationError {
  using ValidationError::ValidationError;
};

struct ContractError : ValidationError {
  using ValidationError::ValidationError;
};

// Malformed input documents (VOC XML, dataset/checkpoint JSON).
struct ParseError : ValidationError {
  using ValidationError::ValidationError;
};

struct SchemaVersionError : ParseError {
  using ParseError::ParseError;
};

// NaN/Inf reached a tensor, or a gradient check failed its threshold.
struct NumericalError : Error {
  using Error::Error;
};

struct DivergenceError : NumericalError {
  using NumericalError::NumericalError;
};

inline bool is_finite(double x) { return std::isfinite(x); }

}  // namespace aod
