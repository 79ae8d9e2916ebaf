#pragma once

// Continuous-time multi-content cache system. Every content has a request
// queue fed by Poisson arrivals (or a replayed trace) and drained at rate
// nu * S while it is cached. The cache holds at most B contents and is
// re-selected after every jump. Cost is the exact time integral of sum_m S_m.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "whittle_cache/mdp.hpp"
#include "whittle_cache/workload.hpp"

namespace wcache {

struct ContentSpec {
  double lambda = 1.0;  ///< may be 0 in the simulator
  double nu = 1.0;
  int s_max = 1;
};

struct SystemConfig {
  std::vector<ContentSpec> contents;
  int cache_size = 1;
  std::vector<int> initial_queues;               ///< empty means all zero
  std::optional<std::vector<TraceEvent>> trace;  ///< replayed arrivals; ids index `contents`

  void validate() const;
  int num_contents() const noexcept { return static_cast<int>(contents.size()); }
};

/// Builds a config from a workload with one shared nu and s_max.
SystemConfig make_system(const Workload& workload, double nu, int s_max, int cache_size);

struct SystemState {
  std::vector<int> queues;
  std::vector<int> cache;  ///< sorted content ids
  double clock = 0.0;
  double cost_integral = 0.0;

  int total_queue() const;
};

SystemState initial_state(const SystemConfig& config);

enum class EventKind { arrival, departure };

struct Event {
  EventKind kind = EventKind::arrival;
  int content = 0;
};

struct SampledEvent {
  double dt = 0.0;
  Event event;
};

/// Total rate sum_m lambda_m 1{S_m < s_max} + sum_{m cached} nu_m S_m.
double total_event_rate(const SystemState& state, const SystemConfig& config);

/// Competing-clocks draw: dt ~ Exp(total rate), then the event in proportion
/// to its rate. Consumes two uniforms. Throws DeadSystem at zero total rate.
SampledEvent next_event(const SystemState& state, const SystemConfig& config, Rng& rng);

/// Accrues dt * sum S into the cost integral, advances the clock and jumps.
void apply_event(SystemState& state, const SystemConfig& config, const SampledEvent& sampled);

enum class PolicyKind { whittle_oracle, whittle_learned, lru, lfu, random };

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& name);

struct PolicySpec {
  PolicyKind kind = PolicyKind::whittle_oracle;
  /// index_tables[m][s]; required for whittle_learned, optional override for
  /// whittle_oracle (computed from the closed form when empty).
  std::vector<std::vector<double>> index_tables;
  std::string label;  ///< row name in comparisons, defaults to to_string(kind)
};

class CachePolicy {
 public:
  virtual ~CachePolicy() = default;
  virtual void on_arrival(int /*content*/, double /*time*/) {}
  /// At most B content ids, sorted ascending.
  virtual std::vector<int> select(const SystemState& state, int cache_size, Rng& rng) = 0;
};

/// Closed-form index tables W_m(s), s = 0..s_max, for every content. A
/// content with lambda = 0 gets an all-zero table.
std::vector<std::vector<double>> oracle_index_tables(const SystemConfig& config);

std::unique_ptr<CachePolicy> make_policy(const PolicySpec& spec, const SystemConfig& config);

/// Top-B contents by index value, ties to the smaller id.
std::vector<int> top_b(const std::vector<double>& scores, int cache_size);

struct Metrics {
  double horizon = 0.0;
  double accumulated_cost = 0.0;
  double average_cost = 0.0;
  std::vector<std::vector<double>> occupancy;  ///< occupancy[m][s]: time spent with S_m = s
  long arrivals = 0;
  long dropped_arrivals = 0;  ///< trace arrivals that hit a full queue
  long departures = 0;
  long events = 0;
  int max_cache_size = 0;
  long capacity_violations = 0;
};

/// One episode on [0, horizon]. Randomness comes from Rng::derive(seed, 0)
/// for the system and Rng::derive(seed, 1) for the policy.
Metrics run_episode(const SystemConfig& config, double horizon, const PolicySpec& policy, std::uint64_t seed);

struct ComparisonRow {
  std::string policy;
  std::uint64_t seed = 0;
  Metrics metrics;
};

struct ComparisonSummary {
  std::string policy;
  std::size_t seeds = 0;
  double mean_accumulated_cost = 0.0;
  double stderr_accumulated_cost = 0.0;
  double mean_average_cost = 0.0;
  double stderr_average_cost = 0.0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;  ///< policy-major, seeds in the given order
  std::vector<ComparisonSummary> summary;
};

ComparisonTable run_comparison(const SystemConfig& config, double horizon, const std::vector<PolicySpec>& policies,
                               const std::vector<std::uint64_t>& seeds);

}  // namespace wcache
