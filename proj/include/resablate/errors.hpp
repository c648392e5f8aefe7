#pragma once

#include <stdexcept>
#include <string>

namespace resablate {

// Shape or configuration mismatch detected before any math runs.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN or Inf produced by an engine operation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad labels, empty datasets and similar input-data problems.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Train-mode batch norm over a single value per channel.
class DegenerateBatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ablation target that has no closed form (stem, head).
class UnsupportedTargetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file: bad magic, unparsable content, wrong length.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncationError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace resablate
