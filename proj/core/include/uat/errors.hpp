#pragma once

#include <stdexcept>

namespace uat {

// Error taxonomy; the CLI maps these onto exit codes (config 2, data 3, numerics 4).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape mismatch or malformed operand. Indicates a caller bug.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid or inconsistent experiment configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Unreadable, truncated, or inconsistent dataset.
struct DataError : Error {
  using Error::Error;
};

// Malformed serialized artifact (checkpoint, tensor snapshot).
struct FormatError : Error {
  using Error::Error;
};

// Non-finite values detected in checked mode, or an irrecoverable numeric state.
struct NumericsError : Error {
  using Error::Error;
};

}  // namespace uat
