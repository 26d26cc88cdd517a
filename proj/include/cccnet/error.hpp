#pragma once

#include <stdexcept>
#include <string>

namespace cccnet {

/// Base of every error the library raises. `code()` is a stable,
/// machine-readable identifier used by the CLI error line.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* code() const noexcept { return "error"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "shape_error"; }
};

class FormatError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "format_error"; }
};

class InvariantError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "invariant_violation"; }
};

class MissingArtifactError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "missing_artifact"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "config_error"; }
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "invalid_argument"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "io_error"; }
};

}  // namespace cccnet
