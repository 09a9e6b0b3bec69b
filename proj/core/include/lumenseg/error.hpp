#pragma once

#include <stdexcept>
#include <string>

namespace lumenseg {

// Error categories double as process exit codes for the command-line tool.
enum class ErrorCategory : int {
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

// Incompatible tensor shapes; the message names the offending axes.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorCategory::kConfig, what) {}
};

// Out-of-range scalar parameter (eps <= 0, stride < 1, ...).
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(ErrorCategory::kConfig, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::kConfig, what) {}
};

// Malformed or mismatching file contents (images, masks, weights, manifests).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorCategory::kData, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::kData, what) {}
};

// NaN/Inf encountered or training diverged.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::kNumeric, what) {}
};

}  // namespace lumenseg
