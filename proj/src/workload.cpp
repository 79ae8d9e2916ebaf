#include "whittle_cache/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <queue>
#include <sstream>

#include "whittle_cache/error.hpp"

namespace wcache {

Workload zipf_workload(int contents, double kappa, double total_rate) {
  if (contents < 1) throw InvalidArgument("zipf workload needs at least one content (got " + std::to_string(contents) + ")");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw InvalidArgument("zipf exponent kappa must be >= 0");
  if (!(total_rate > 0.0) || !std::isfinite(total_rate)) throw InvalidArgument("total_rate must be > 0");
  Workload w;
  w.rates.resize(static_cast<std::size_t>(contents));
  double norm = 0.0;
  for (int m = 1; m <= contents; ++m) norm += std::pow(static_cast<double>(m), -kappa);
  for (int m = 1; m <= contents; ++m) {
    w.rates[static_cast<std::size_t>(m - 1)] = total_rate * std::pow(static_cast<double>(m), -kappa) / norm;
    w.labels.push_back(static_cast<std::uint64_t>(m - 1));
  }
  std::ostringstream os;
  os << "zipf(M=" << contents << ",kappa=" << kappa << ",total=" << total_rate << ")";
  w.source = os.str();
  return w;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  text = trim(text);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

bool parse_event(std::string_view line, TraceEvent& ev) {
  const auto comma = line.find(',');
  if (comma == std::string_view::npos) return false;
  if (!parse_number(line.substr(0, comma), ev.timestamp)) return false;
  if (!std::isfinite(ev.timestamp) || ev.timestamp < 0.0) return false;
  return parse_number(line.substr(comma + 1), ev.content_id);
}

}  // namespace

ParsedTrace parse_trace(std::istream& in, const std::string& source) {
  ParsedTrace out;
  std::string raw;
  long line_no = 0;
  bool header_seen = false;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != "timestamp,content_id") {
        throw ParseError("line " + std::to_string(line_no) + ": expected header 'timestamp,content_id'");
      }
      header_seen = true;
      continue;
    }
    TraceEvent ev;
    if (!parse_event(line, ev)) {
      ++out.malformed_lines;
      continue;
    }
    if (!out.events.empty() && ev.timestamp < out.events.back().timestamp) throw NonMonotonicTimestamps(line_no);
    out.events.push_back(ev);
  }
  if (out.events.empty()) throw EmptyTrace();
  out.t_first = out.events.front().timestamp;
  out.t_last = out.events.back().timestamp;
  const double span = out.t_last - out.t_first;
  if (!(span > 0.0)) throw ParseError("trace window has zero length; rates are undefined");

  std::map<std::uint64_t, long> counts;
  for (const auto& ev : out.events) ++counts[ev.content_id];
  for (const auto& [id, count] : counts) {
    out.workload.labels.push_back(id);
    out.workload.rates.push_back(static_cast<double>(count) / span);
  }
  out.workload.source = "trace(" + source + ")";
  return out;
}

ParsedTrace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace file '" + path + "'");
  return parse_trace(in, path);
}

std::vector<TraceEvent> generate_trace(const Workload& workload, double horizon, Rng& rng) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidArgument("trace horizon must be > 0");
  if (workload.labels.size() != workload.rates.size()) throw InvalidArgument("workload labels and rates differ in size");
  // merge the per-content Poisson streams by next arrival time
  using Pending = std::pair<double, std::size_t>;
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> next;
  for (std::size_t m = 0; m < workload.rates.size(); ++m) {
    const double rate = workload.rates[m];
    if (!(rate >= 0.0) || !std::isfinite(rate)) throw InvalidArgument("workload rates must be finite and >= 0");
    if (rate > 0.0) next.emplace(rng.exponential(rate), m);
  }
  std::vector<TraceEvent> events;
  while (!next.empty() && next.top().first < horizon) {
    const auto [t, m] = next.top();
    next.pop();
    events.push_back({t, workload.labels[m]});
    next.emplace(t + rng.exponential(workload.rates[m]), m);
  }
  return events;
}

void write_trace(std::ostream& out, std::span<const TraceEvent> events) {
  out << "timestamp,content_id\n";
  char buf[64];
  for (const auto& ev : events) {
    const auto res = std::to_chars(buf, buf + sizeof buf, ev.timestamp);
    out.write(buf, res.ptr - buf);
    out << ',' << ev.content_id << '\n';
  }
}

}  // namespace wcache
