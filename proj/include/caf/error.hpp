#pragma once

#include <stdexcept>
#include <string>

namespace caf {

// Failure categories. The numeric values double as process exit codes.
enum class ErrorKind : int {
  usage = 2,
  io = 3,
  format = 4,
  numeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

// Contract violations: bad shapes, bad configs, out-of-range arguments.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

// Malformed files: bad magic, truncated payloads, unparsable records.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::format, what) {}
};

// NaN/Inf surfaced by a numeric routine.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

}  // namespace caf
