#include "whittle_cache/error.hpp"

#include <sstream>

namespace wcache {

namespace {

std::string degenerate_message(int threshold, double denominator) {
  std::ostringstream os;
  os << "closed-form index denominator vanishes at R=" << threshold << " (|" << denominator << "| < 1e-12)";
  return os.str();
}

std::string max_iterations_message(const std::string& solver, long iterations, double residual) {
  std::ostringstream os;
  os << solver << " did not converge after " << iterations << " iterations (residual " << residual << ")";
  return os.str();
}

std::string bracket_message(int state, double w_hi) {
  std::ostringstream os;
  os << "no passive/active switch at state " << state << " for multipliers in [0, " << w_hi << "]";
  return os.str();
}

}  // namespace

DegenerateDenominator::DegenerateDenominator(int threshold, double denominator)
    : Error(ErrorCode::degenerate_denominator, degenerate_message(threshold, denominator)), threshold_(threshold) {}

MaxIterationsExceeded::MaxIterationsExceeded(const std::string& solver, long iterations, double residual)
    : Error(ErrorCode::max_iterations_exceeded, max_iterations_message(solver, iterations, residual)) {}

BracketNotFound::BracketNotFound(int state, double w_hi)
    : Error(ErrorCode::bracket_not_found, bracket_message(state, w_hi)) {}

NonMonotonicTimestamps::NonMonotonicTimestamps(long line)
    : Error(ErrorCode::non_monotonic_timestamps, "timestamp decreases at line " + std::to_string(line)),
      line_(line) {}

}  // namespace wcache
