#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsr {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape disagreement. `axis()` names the offending dimension
/// ("n", "c", "h", "w", or an operation-specific label).
class DimensionError : public Error {
 public:
  DimensionError(std::string op, std::string axis, long expected, long actual);

  const std::string& op() const { return op_; }
  const std::string& axis() const { return axis_; }
  long expected() const { return expected_; }
  long actual() const { return actual_; }

 private:
  std::string op_;
  std::string axis_;
  long expected_;
  long actual_;
};

/// Malformed binary input. `offset()` is the byte position where parsing
/// failed; for truncation it is the first missing byte.
class ParseError : public Error {
 public:
  ParseError(std::string what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Invalid configuration. Carries every violation found, not just the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  explicit ConfigError(std::string violation);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// A NaN or Inf showed up where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace vsr
