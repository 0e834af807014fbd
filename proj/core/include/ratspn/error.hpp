#pragma once

#include <stdexcept>
#include <string>

namespace ratspn {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied argument violates a precondition (shape, range, NaN).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A region graph or circuit is not structurally sound.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (IDX, CSV, model files).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Model file written by an unsupported format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Objective or gradient became non-finite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ratspn
