#pragma once

#include <stdexcept>

namespace geovit {

/// Binary-container corruption, split by failure class so callers can tell a
/// wrong file from a damaged one. Shared by the tile and checkpoint formats.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : FormatError {
  using FormatError::FormatError;
};
struct TruncatedError : FormatError {
  using FormatError::FormatError;
};
struct ChecksumError : FormatError {
  using FormatError::FormatError;
};

}  // namespace geovit
