#pragma once

#include <stdexcept>
#include <string>

namespace memcap {

/// Base of every error thrown by the library. The CLI maps subclasses onto
/// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter or configuration value violates its documented invariant.
class InvalidParameter : public Error {
 public:
  InvalidParameter(const std::string& field, const std::string& why)
      : Error("invalid parameter '" + field + "': " + why), field_(field) {}

  [[nodiscard]] const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf met where a finite value is required.
class NonFinite : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset file.
class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CheckpointVersionMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Truncated file, bad magic, bad checksum or inconsistent contents.
class CorruptCheckpoint : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace memcap
