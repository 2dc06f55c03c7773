#pragma once

#include <stdexcept>
#include <string>

namespace cignn {

/// Rejected input: violated precondition, inconsistent shapes, malformed file.
/// The CLI maps it to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stored file that does not decode: bad magic, version, truncation, CRC.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Numerical abort (non-finite values, solver blow-up). CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace cignn
