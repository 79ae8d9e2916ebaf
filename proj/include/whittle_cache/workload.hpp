#pragma once

// Request workloads: Zipf-distributed synthetic rates and the request-trace
// CSV format (header `timestamp,content_id`, `#` comments).

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "whittle_cache/mdp.hpp"

namespace wcache {

struct Workload {
  std::vector<double> rates;           ///< lambda per content, requests per unit time
  std::vector<std::uint64_t> labels;   ///< content id of each rate entry
  std::string source;                  ///< e.g. "zipf(M=20,kappa=0.9,total=28.8)" or "trace(path)"
};

/// lambda_m = total_rate * m^-kappa / sum_j j^-kappa over ranks m = 1..M; labels 0..M-1.
Workload zipf_workload(int contents, double kappa, double total_rate);

struct TraceEvent {
  double timestamp = 0.0;
  std::uint64_t content_id = 0;
};

struct ParsedTrace {
  std::vector<TraceEvent> events;
  Workload workload;            ///< labels sorted ascending
  long malformed_lines = 0;     ///< skipped data lines
  double t_first = 0.0;
  double t_last = 0.0;
};

/// Rates are count_m / (t_last - t_first) over the whole trace window.
/// Throws EmptyTrace, NonMonotonicTimestamps (1-based line), ParseError for a
/// missing header or a zero-length window.
ParsedTrace parse_trace(std::istream& in, const std::string& source = "trace");
ParsedTrace load_trace(const std::string& path);

/// Superposed Poisson arrivals of every content on [0, horizon), in time order.
std::vector<TraceEvent> generate_trace(const Workload& workload, double horizon, Rng& rng);

void write_trace(std::ostream& out, std::span<const TraceEvent> events);

}  // namespace wcache
