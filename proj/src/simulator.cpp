#include "whittle_cache/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "whittle_cache/error.hpp"
#include "whittle_cache/whittle.hpp"

namespace wcache {

void SystemConfig::validate() const {
  std::ostringstream os;
  if (contents.empty()) os << "at least one content is required; ";
  if (cache_size < 0) os << "cache size must be >= 0 (got " << cache_size << "); ";
  for (std::size_t m = 0; m < contents.size(); ++m) {
    const auto& c = contents[m];
    if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) os << "content " << m << ": lambda must be >= 0; ";
    if (!(c.nu > 0.0) || !std::isfinite(c.nu)) os << "content " << m << ": nu must be > 0; ";
    if (c.s_max < 1) os << "content " << m << ": s_max must be >= 1; ";
  }
  if (!initial_queues.empty()) {
    if (initial_queues.size() != contents.size()) {
      os << "initial_queues has " << initial_queues.size() << " entries for " << contents.size() << " contents; ";
    } else {
      for (std::size_t m = 0; m < contents.size(); ++m) {
        if (initial_queues[m] < 0 || initial_queues[m] > contents[m].s_max) {
          os << "content " << m << ": initial queue outside [0, s_max]; ";
        }
      }
    }
  }
  if (trace) {
    double prev = -std::numeric_limits<double>::infinity();
    for (const auto& ev : *trace) {
      if (ev.content_id >= contents.size()) {
        os << "trace refers to content " << ev.content_id << " but only " << contents.size() << " are configured; ";
        break;
      }
      if (ev.timestamp < prev) {
        os << "trace timestamps decrease; ";
        break;
      }
      prev = ev.timestamp;
    }
  }
  const std::string problems = os.str();
  if (!problems.empty()) throw InvalidArgument("invalid system config: " + problems.substr(0, problems.size() - 2));
}

SystemConfig make_system(const Workload& workload, double nu, int s_max, int cache_size) {
  SystemConfig config;
  config.cache_size = cache_size;
  for (double rate : workload.rates) config.contents.push_back({rate, nu, s_max});
  config.validate();
  return config;
}

int SystemState::total_queue() const { return std::accumulate(queues.begin(), queues.end(), 0); }

SystemState initial_state(const SystemConfig& config) {
  SystemState state;
  state.queues = config.initial_queues.empty() ? std::vector<int>(config.contents.size(), 0) : config.initial_queues;
  return state;
}

namespace {

double departure_rate(const SystemState& state, const SystemConfig& config, int m) {
  const auto i = static_cast<std::size_t>(m);
  return config.contents[i].nu * static_cast<double>(state.queues[i]);
}

double arrival_rate(const SystemState& state, const SystemConfig& config, int m) {
  const auto i = static_cast<std::size_t>(m);
  return state.queues[i] < config.contents[i].s_max ? config.contents[i].lambda : 0.0;
}

double total_departure_rate(const SystemState& state, const SystemConfig& config) {
  double total = 0.0;
  for (int m : state.cache) total += departure_rate(state, config, m);
  return total;
}

/// Departure among cached contents in proportion to nu * S; `target` in [0, total).
int pick_departure(const SystemState& state, const SystemConfig& config, double target) {
  int last = -1;
  for (int m : state.cache) {
    const double r = departure_rate(state, config, m);
    if (r <= 0.0) continue;
    last = m;
    if (target < r) return m;
    target -= r;
  }
  return last;  // rounding at the top end
}

}  // namespace

double total_event_rate(const SystemState& state, const SystemConfig& config) {
  double total = 0.0;
  for (int m = 0; m < config.num_contents(); ++m) total += arrival_rate(state, config, m);
  return total + total_departure_rate(state, config);
}

SampledEvent next_event(const SystemState& state, const SystemConfig& config, Rng& rng) {
  const double total = total_event_rate(state, config);
  if (!(total > 0.0)) throw DeadSystem();
  SampledEvent out;
  out.dt = rng.exponential(total);
  double target = rng.uniform() * total;
  int last_arrival = -1;
  for (int m = 0; m < config.num_contents(); ++m) {
    const double r = arrival_rate(state, config, m);
    if (r <= 0.0) continue;
    last_arrival = m;
    if (target < r) {
      out.event = {EventKind::arrival, m};
      return out;
    }
    target -= r;
  }
  const int m = pick_departure(state, config, target);
  out.event = m >= 0 ? Event{EventKind::departure, m} : Event{EventKind::arrival, last_arrival};
  return out;
}

void apply_event(SystemState& state, const SystemConfig& config, const SampledEvent& sampled) {
  state.cost_integral += sampled.dt * static_cast<double>(state.total_queue());
  state.clock += sampled.dt;
  auto& q = state.queues.at(static_cast<std::size_t>(sampled.event.content));
  if (sampled.event.kind == EventKind::arrival) {
    if (q < config.contents[static_cast<std::size_t>(sampled.event.content)].s_max) ++q;
  } else {
    if (q <= 0) throw InvalidArgument("departure from an empty queue");
    --q;
  }
}

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::whittle_oracle:
      return "whittle-oracle";
    case PolicyKind::whittle_learned:
      return "whittle-learned";
    case PolicyKind::lru:
      return "lru";
    case PolicyKind::lfu:
      return "lfu";
    case PolicyKind::random:
      return "random";
  }
  return "unknown";
}

PolicyKind policy_kind_from_string(const std::string& name) {
  for (PolicyKind k : {PolicyKind::whittle_oracle, PolicyKind::whittle_learned, PolicyKind::lru, PolicyKind::lfu,
                       PolicyKind::random}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown policy '" + name + "' (expected whittle-oracle, whittle-learned, lru, lfu or random)");
}

std::vector<int> top_b(const std::vector<double>& scores, int cache_size) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  const auto b = std::min(order.size(), static_cast<std::size_t>(std::max(cache_size, 0)));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(b), order.end(), [&](int x, int y) {
    const double sx = scores[static_cast<std::size_t>(x)];
    const double sy = scores[static_cast<std::size_t>(y)];
    return sx > sy || (sx == sy && x < y);
  });
  order.resize(b);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::vector<double>> oracle_index_tables(const SystemConfig& config) {
  config.validate();
  std::vector<std::vector<double>> tables;
  for (const auto& c : config.contents) {
    if (c.lambda == 0.0) {
      tables.emplace_back(static_cast<std::size_t>(c.s_max + 1), 0.0);
      continue;
    }
    PerContentParams p;
    p.lambda = c.lambda;
    p.nu = c.nu;
    p.s_max = c.s_max;
    tables.push_back(whittle_table(p).indices);
  }
  return tables;
}

namespace {

class IndexPolicy final : public CachePolicy {
 public:
  explicit IndexPolicy(std::vector<std::vector<double>> tables) : tables_(std::move(tables)) {}
  std::vector<int> select(const SystemState& state, int cache_size, Rng&) override {
    scores_.resize(tables_.size());
    for (std::size_t m = 0; m < tables_.size(); ++m) scores_[m] = tables_[m][static_cast<std::size_t>(state.queues[m])];
    return top_b(scores_, cache_size);
  }

 private:
  std::vector<std::vector<double>> tables_;
  std::vector<double> scores_;
};

class RecencyPolicy final : public CachePolicy {
 public:
  explicit RecencyPolicy(std::size_t n) : last_(n, -std::numeric_limits<double>::infinity()) {}
  void on_arrival(int content, double time) override { last_[static_cast<std::size_t>(content)] = time; }
  std::vector<int> select(const SystemState&, int cache_size, Rng&) override { return top_b(last_, cache_size); }

 private:
  std::vector<double> last_;
};

class FrequencyPolicy final : public CachePolicy {
 public:
  explicit FrequencyPolicy(std::size_t n) : counts_(n, 0.0) {}
  void on_arrival(int content, double) override { counts_[static_cast<std::size_t>(content)] += 1.0; }
  std::vector<int> select(const SystemState&, int cache_size, Rng&) override { return top_b(counts_, cache_size); }

 private:
  std::vector<double> counts_;
};

class RandomPolicy final : public CachePolicy {
 public:
  explicit RandomPolicy(std::size_t n) : ids_(n) {}
  std::vector<int> select(const SystemState&, int cache_size, Rng& rng) override {
    std::iota(ids_.begin(), ids_.end(), 0);
    const auto b = std::min(ids_.size(), static_cast<std::size_t>(std::max(cache_size, 0)));
    for (std::size_t i = 0; i < b; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(ids_.size() - i));
      std::swap(ids_[i], ids_[j]);
    }
    std::vector<int> out(ids_.begin(), ids_.begin() + static_cast<std::ptrdiff_t>(b));
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::vector<int> ids_;
};

void check_tables(const std::vector<std::vector<double>>& tables, const SystemConfig& config) {
  if (tables.size() != config.contents.size()) {
    throw InvalidArgument("index tables cover " + std::to_string(tables.size()) + " contents, config has " +
                          std::to_string(config.contents.size()));
  }
  for (std::size_t m = 0; m < tables.size(); ++m) {
    if (tables[m].size() != static_cast<std::size_t>(config.contents[m].s_max + 1)) {
      throw InvalidArgument("index table for content " + std::to_string(m) + " does not cover states 0..s_max");
    }
  }
}

}  // namespace

std::unique_ptr<CachePolicy> make_policy(const PolicySpec& spec, const SystemConfig& config) {
  config.validate();
  const std::size_t n = config.contents.size();
  switch (spec.kind) {
    case PolicyKind::whittle_oracle:
    case PolicyKind::whittle_learned: {
      if (spec.kind == PolicyKind::whittle_learned && spec.index_tables.empty()) {
        throw InvalidArgument("whittle-learned policy needs index tables");
      }
      auto tables = spec.index_tables.empty() ? oracle_index_tables(config) : spec.index_tables;
      check_tables(tables, config);
      return std::make_unique<IndexPolicy>(std::move(tables));
    }
    case PolicyKind::lru:
      return std::make_unique<RecencyPolicy>(n);
    case PolicyKind::lfu:
      return std::make_unique<FrequencyPolicy>(n);
    case PolicyKind::random:
      return std::make_unique<RandomPolicy>(n);
  }
  throw InvalidArgument("unknown policy kind");
}

namespace {

void accrue(SystemState& state, Metrics& metrics, double dt) {
  for (std::size_t m = 0; m < state.queues.size(); ++m) {
    metrics.occupancy[m][static_cast<std::size_t>(state.queues[m])] += dt;
  }
  state.cost_integral += dt * static_cast<double>(state.total_queue());
  state.clock += dt;
}

}  // namespace

Metrics run_episode(const SystemConfig& config, double horizon, const PolicySpec& policy_spec, std::uint64_t seed) {
  config.validate();
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidArgument("horizon must be > 0");
  const auto policy = make_policy(policy_spec, config);
  Rng system_rng = Rng::derive(seed, 0);
  Rng policy_rng = Rng::derive(seed, 1);

  SystemState state = initial_state(config);
  Metrics metrics;
  metrics.horizon = horizon;
  for (const auto& c : config.contents) metrics.occupancy.emplace_back(static_cast<std::size_t>(c.s_max + 1), 0.0);

  auto reselect = [&] {
    state.cache = policy->select(state, config.cache_size, policy_rng);
    const int size = static_cast<int>(state.cache.size());
    metrics.max_cache_size = std::max(metrics.max_cache_size, size);
    if (size > config.cache_size) ++metrics.capacity_violations;
  };
  auto jump = [&](const Event& ev) {
    auto& q = state.queues[static_cast<std::size_t>(ev.content)];
    if (ev.kind == EventKind::arrival) {
      ++q;
      ++metrics.arrivals;
    } else {
      --q;
      ++metrics.departures;
    }
    ++metrics.events;
  };

  reselect();
  if (config.trace) {
    const auto& trace = *config.trace;
    const double t0 = trace.empty() ? 0.0 : trace.front().timestamp;
    std::size_t next = 0;
    while (true) {
      const double dep_rate = total_departure_rate(state, config);
      const double dt_dep = dep_rate > 0.0 ? system_rng.exponential(dep_rate) : std::numeric_limits<double>::infinity();
      const double t_arr =
          next < trace.size() ? trace[next].timestamp - t0 : std::numeric_limits<double>::infinity();
      const double t_dep = state.clock + dt_dep;
      const double t_next = std::min(t_dep, t_arr);
      if (t_next > horizon) {
        accrue(state, metrics, horizon - state.clock);
        break;
      }
      accrue(state, metrics, t_next - state.clock);
      if (t_dep < t_arr) {
        const int m = pick_departure(state, config, system_rng.uniform() * dep_rate);
        jump({EventKind::departure, m});
      } else {
        const int m = static_cast<int>(trace[next].content_id);
        ++next;
        policy->on_arrival(m, state.clock);
        if (state.queues[static_cast<std::size_t>(m)] >= config.contents[static_cast<std::size_t>(m)].s_max) {
          ++metrics.dropped_arrivals;
          continue;  // no state change, not a decision epoch
        }
        jump({EventKind::arrival, m});
      }
      reselect();
    }
  } else {
    while (true) {
      if (!(total_event_rate(state, config) > 0.0)) {
        accrue(state, metrics, horizon - state.clock);
        break;
      }
      const SampledEvent ev = next_event(state, config, system_rng);
      if (state.clock + ev.dt > horizon) {
        accrue(state, metrics, horizon - state.clock);
        break;
      }
      accrue(state, metrics, ev.dt);
      if (ev.event.kind == EventKind::arrival) policy->on_arrival(ev.event.content, state.clock);
      jump(ev.event);
      reselect();
    }
  }
  metrics.accumulated_cost = state.cost_integral;
  metrics.average_cost = state.cost_integral / horizon;
  return metrics;
}

ComparisonTable run_comparison(const SystemConfig& config, double horizon, const std::vector<PolicySpec>& policies,
                               const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw InvalidArgument("comparison needs at least one seed");
  if (policies.empty()) throw InvalidArgument("comparison needs at least one policy");
  ComparisonTable table;
  for (const auto& spec : policies) {
    const std::string name = spec.label.empty() ? to_string(spec.kind) : spec.label;
    std::vector<double> acc;
    std::vector<double> avg;
    for (std::uint64_t seed : seeds) {
      Metrics m = run_episode(config, horizon, spec, seed);
      acc.push_back(m.accumulated_cost);
      avg.push_back(m.average_cost);
      table.rows.push_back({name, seed, std::move(m)});
    }
    auto mean_se = [](const std::vector<double>& xs) {
      const double n = static_cast<double>(xs.size());
      const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
      if (xs.size() < 2) return std::pair{mean, 0.0};
      double ss = 0.0;
      for (double x : xs) ss += (x - mean) * (x - mean);
      return std::pair{mean, std::sqrt(ss / (n - 1.0) / n)};
    };
    const auto [acc_mean, acc_se] = mean_se(acc);
    const auto [avg_mean, avg_se] = mean_se(avg);
    table.summary.push_back({name, seeds.size(), acc_mean, acc_se, avg_mean, avg_se});
  }
  return table;
}

}  // namespace wcache
