#pragma once

#include <stdexcept>
#include <string>

namespace ila {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kSuccess = 0,
  kConfiguration = 2,
  kData = 3,
  kNumeric = 4,
};

/// Base of every error thrown by the library. Each subclass carries the exit
/// code the CLI maps it to.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code)
      : std::runtime_error(what), code_(code) {}

  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Shape or rank mismatch between tensors handed to a primitive.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error("dimension error: " + what, ExitCode::kConfiguration) {}
};

/// Invalid hyperparameter, unknown architecture, empty ensemble, ...
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error("configuration error: " + what, ExitCode::kConfiguration) {}
};

/// Misuse of the autodiff API (non-scalar root, foreign tape, ...).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what)
      : Error("usage error: " + what, ExitCode::kConfiguration) {}
};

/// Bad data values: labels out of range, mismatched originals, ...
class InputError : public Error {
 public:
  explicit InputError(const std::string& what)
      : Error("input error: " + what, ExitCode::kData) {}
};

/// Malformed file contents. `offset` is the byte position where parsing
/// stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error("format error at byte " + std::to_string(offset) + ": " + what,
              ExitCode::kData),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Non-finite values during training or optimization.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error("numeric failure: " + what, ExitCode::kNumeric) {}
};

}  // namespace ila
