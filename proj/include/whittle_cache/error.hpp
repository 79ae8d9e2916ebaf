#pragma once

#include <stdexcept>
#include <string>

namespace wcache {

enum class ErrorCode {
  invalid_argument = 1,
  degenerate_denominator = 2,
  max_iterations_exceeded = 3,
  bracket_not_found = 4,
  dead_system = 5,
  empty_trace = 6,
  non_monotonic_timestamps = 7,
  parse_error = 8,
  io_error = 9,
};

/// Base of every exception thrown by the library. The code maps one-to-one
/// onto the status values of the C interface.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(ErrorCode::invalid_argument, what) {}
};

/// The closed-form index ratio has a vanishing denominator at `threshold`.
class DegenerateDenominator : public Error {
 public:
  DegenerateDenominator(int threshold, double denominator);
  int threshold() const noexcept { return threshold_; }

 private:
  int threshold_;
};

class MaxIterationsExceeded : public Error {
 public:
  MaxIterationsExceeded(const std::string& solver, long iterations, double residual);
};

class BracketNotFound : public Error {
 public:
  BracketNotFound(int state, double w_hi);
};

class DeadSystem : public Error {
 public:
  DeadSystem() : Error(ErrorCode::dead_system, "total event rate is zero") {}
};

class EmptyTrace : public Error {
 public:
  EmptyTrace() : Error(ErrorCode::empty_trace, "trace contains no request events") {}
};

class NonMonotonicTimestamps : public Error {
 public:
  explicit NonMonotonicTimestamps(long line);
  long line() const noexcept { return line_; }

 private:
  long line_;
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(ErrorCode::parse_error, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCode::io_error, what) {}
};

}  // namespace wcache
