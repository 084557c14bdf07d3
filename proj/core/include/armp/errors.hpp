#pragma once

#include <stdexcept>
#include <string>

namespace armp {

/// Base class for every error the library raises on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shape disagreement (matmul inner dims, conv output size, ...).
struct ShapeError : Error {
  using Error::Error;
};

/// Bad argument value: index out of range, degenerate config range, ...
struct ValueError : Error {
  using Error::Error;
};

/// Non-finite values surfaced where finite math is required (NaN loss, ...).
struct NumericError : Error {
  using Error::Error;
};

/// Structurally invalid file: bad magic, bad version, malformed table.
struct FormatError : Error {
  using Error::Error;
};

/// File shorter than its header promises.
struct TruncationError : FormatError {
  using FormatError::FormatError;
};

/// Payload does not match the stored integrity checksum.
struct ChecksumError : FormatError {
  using FormatError::FormatError;
};

/// Checkpoint config snapshot disagrees with the runtime config.
struct ConfigMismatchError : Error {
  using Error::Error;
};

/// Distance metrics are undefined on empty masks.
struct EmptyMaskError : Error {
  using Error::Error;
};

/// Filesystem-level failure (unreadable path, failed atomic rename, ...).
struct IoError : Error {
  using Error::Error;
};

}  // namespace armp
