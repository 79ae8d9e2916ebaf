#include "whittle_cache/whittle_cache.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <optional>
#include <stdexcept>
#include <string>

#include "whittle_cache/error.hpp"
#include "whittle_cache/learning.hpp"
#include "whittle_cache/simulator.hpp"
#include "whittle_cache/whittle.hpp"
#include "whittle_cache/workload.hpp"

struct wc_learn_run {
  wcache::RunResult result;
};

struct wc_workload {
  wcache::Workload workload;
  std::optional<std::vector<wcache::TraceEvent>> events;  // trace ids remapped to positions
  long malformed_lines = 0;
};

struct wc_system {
  wcache::SystemConfig config;
};

struct wc_policy {
  wcache::PolicySpec spec;
};

struct wc_episode {
  wcache::Metrics metrics;
};

namespace {

struct BufferTooSmall : std::runtime_error {
  using std::runtime_error::runtime_error;
};

thread_local std::string g_last_error;
thread_local long g_last_detail = 0;

wc_status fail(wc_status status, const std::string& message, long detail = 0) {
  g_last_error = message;
  g_last_detail = detail;
  return status;
}

wc_status from_code(wcache::ErrorCode code) {
  switch (code) {
    case wcache::ErrorCode::invalid_argument:
      return WC_INVALID_ARGUMENT;
    case wcache::ErrorCode::degenerate_denominator:
      return WC_DEGENERATE_DENOMINATOR;
    case wcache::ErrorCode::max_iterations_exceeded:
      return WC_MAX_ITERATIONS_EXCEEDED;
    case wcache::ErrorCode::bracket_not_found:
      return WC_BRACKET_NOT_FOUND;
    case wcache::ErrorCode::dead_system:
      return WC_DEAD_SYSTEM;
    case wcache::ErrorCode::empty_trace:
      return WC_EMPTY_TRACE;
    case wcache::ErrorCode::non_monotonic_timestamps:
      return WC_NON_MONOTONIC_TIMESTAMPS;
    case wcache::ErrorCode::parse_error:
      return WC_PARSE_ERROR;
    case wcache::ErrorCode::io_error:
      return WC_IO_ERROR;
  }
  return WC_INTERNAL_ERROR;
}

/// Runs `body`, translating exceptions into status codes.
template <typename F>
wc_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    g_last_detail = 0;
    return WC_OK;
  } catch (const wcache::DegenerateDenominator& e) {
    return fail(WC_DEGENERATE_DENOMINATOR, e.what(), e.threshold());
  } catch (const wcache::NonMonotonicTimestamps& e) {
    return fail(WC_NON_MONOTONIC_TIMESTAMPS, e.what(), e.line());
  } catch (const wcache::Error& e) {
    return fail(from_code(e.code()), e.what());
  } catch (const BufferTooSmall& e) {
    return fail(WC_BUFFER_TOO_SMALL, e.what());
  } catch (const std::bad_alloc&) {
    return fail(WC_INTERNAL_ERROR, "out of memory");
  } catch (const std::exception& e) {
    return fail(WC_INTERNAL_ERROR, e.what());
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw wcache::InvalidArgument(what);
}

wcache::PerContentParams to_params(const wc_params* p) {
  require(p != nullptr, "params is null");
  wcache::PerContentParams out;
  out.lambda = p->lambda;
  out.nu = p->nu;
  out.s_max = p->s_max;
  out.alpha = p->alpha;
  out.validate();
  return out;
}

void check_len(size_t len, size_t need) {
  if (len < need) {
    throw BufferTooSmall("output buffer holds " + std::to_string(len) + " values, " + std::to_string(need) +
                                  " needed");
  }
}

template <typename T>
void copy_out(const std::vector<T>& src, T* out, size_t len) {
  require(out != nullptr, "output buffer is null");
  check_len(len, src.size());
  std::copy(src.begin(), src.end(), out);
}

}  // namespace

extern "C" {

const char* wc_version(void) { return WHITTLE_CACHE_VERSION; }

const char* wc_last_error(void) { return g_last_error.c_str(); }

long wc_last_error_detail(void) { return g_last_detail; }

const char* wc_status_name(wc_status status) {
  switch (status) {
    case WC_OK:
      return "ok";
    case WC_INVALID_ARGUMENT:
      return "invalid_argument";
    case WC_DEGENERATE_DENOMINATOR:
      return "degenerate_denominator";
    case WC_MAX_ITERATIONS_EXCEEDED:
      return "max_iterations_exceeded";
    case WC_BRACKET_NOT_FOUND:
      return "bracket_not_found";
    case WC_DEAD_SYSTEM:
      return "dead_system";
    case WC_EMPTY_TRACE:
      return "empty_trace";
    case WC_NON_MONOTONIC_TIMESTAMPS:
      return "non_monotonic_timestamps";
    case WC_PARSE_ERROR:
      return "parse_error";
    case WC_IO_ERROR:
      return "io_error";
    case WC_BUFFER_TOO_SMALL:
      return "buffer_too_small";
    case WC_INTERNAL_ERROR:
      return "internal_error";
  }
  return "unknown";
}

uint64_t wc_derive_seed(uint64_t master, uint64_t stream) { return wcache::Rng::derive(master, stream).next(); }

void wc_params_default(wc_params* params) {
  if (params == nullptr) return;
  const wcache::PerContentParams d;
  *params = wc_params{d.lambda, d.nu, d.s_max, d.alpha};
}

wc_status wc_stationary_distribution(const wc_params* params, int threshold, double* out, size_t len) {
  return guarded([&] { copy_out(wcache::stationary_distribution(to_params(params), threshold).probs, out, len); });
}

wc_status wc_whittle_index(const wc_params* params, int threshold, double* out) {
  return guarded([&] {
    require(out != nullptr, "output is null");
    *out = wcache::whittle_index_closed_form(to_params(params), threshold);
  });
}

wc_status wc_whittle_table(const wc_params* params, double* out, size_t len, int* indexable) {
  return guarded([&] {
    const auto p = to_params(params);
    require(out != nullptr, "output buffer is null");
    check_len(len, static_cast<size_t>(p.num_states()));
    // row by row, so a degenerate threshold still leaves the earlier rows filled
    for (int r = 0; r <= p.s_max; ++r) out[r] = wcache::whittle_index_closed_form(p, r);
    if (indexable != nullptr) *indexable = wcache::whittle_table(p).indexable ? 1 : 0;
  });
}

wc_status wc_indifference_index(const wc_params* params, int state, double tol, double* out) {
  return guarded([&] {
    require(out != nullptr, "output is null");
    *out = wcache::indifference_index_oracle(to_params(params), state, tol);
  });
}

wc_status wc_discounted_threshold_index(const wc_params* params, int threshold, double* out) {
  return guarded([&] {
    require(out != nullptr, "output is null");
    *out = wcache::discounted_threshold_index(to_params(params), threshold);
  });
}

wc_status wc_discounted_greedy_policy(const wc_params* params, double w, double tol, int* actions, size_t len) {
  return guarded([&] {
    const auto p = to_params(params);
    const auto policy = wcache::greedy_policy(wcache::discounted_value_iteration(p, w, tol));
    std::vector<int> a;
    for (auto act : policy) a.push_back(static_cast<int>(wcache::to_index(act)));
    copy_out(a, actions, len);
  });
}

wc_status wc_passive_set(const wc_params* params, double w, int* passive, size_t len) {
  return guarded([&] {
    const auto p = to_params(params);
    std::vector<int> flags(static_cast<size_t>(p.num_states()), 0);
    for (int s : wcache::passive_set(p, w)) flags[static_cast<size_t>(s)] = 1;
    copy_out(flags, passive, len);
  });
}

wc_status wc_threshold_of_policy(const int* actions, size_t len, int* threshold, int* is_threshold) {
  return guarded([&] {
    require(actions != nullptr || len == 0, "actions is null");
    require(threshold != nullptr && is_threshold != nullptr, "output is null");
    std::vector<wcache::Action> policy;
    for (size_t i = 0; i < len; ++i) {
      require(actions[i] == 0 || actions[i] == 1, "actions must be 0 or 1");
      policy.push_back(wcache::action_from_index(actions[i]));
    }
    const auto r = wcache::threshold_of_policy(policy);
    *is_threshold = r ? 1 : 0;
    *threshold = r.value_or(-1);
  });
}

void wc_learn_options_default(wc_learn_options* options) {
  if (options == nullptr) return;
  const wcache::StepSizeSchedule s;
  const wcache::FeatureSpec f;
  const wcache::RunOptions r;
  *options = wc_learn_options{WC_QPLUS_WHITTLE,
                              WC_SCHEDULE_GEOMETRIC,
                              s.gamma0,
                              s.eta0,
                              s.decay_factor,
                              s.decay_period,
                              WC_FEATURES_GAUSSIAN_RBF,
                              f.dim,
                              f.bandwidth,
                              1000,
                              0,
                              0,
                              0,
                              r.epsilon};
}

wc_status wc_learn(const wc_params* params, const wc_learn_options* options, wc_learn_run** out) {
  return guarded([&] {
    require(options != nullptr && out != nullptr, "options or output is null");
    *out = nullptr;
    const auto p = to_params(params);
    wcache::StepSizeSchedule schedule;
    require(options->schedule_kind == WC_SCHEDULE_THEOREM1 || options->schedule_kind == WC_SCHEDULE_GEOMETRIC,
            "unknown schedule kind");
    schedule.kind = options->schedule_kind == WC_SCHEDULE_THEOREM1 ? wcache::ScheduleKind::theorem1
                                                                   : wcache::ScheduleKind::geometric;
    schedule.gamma0 = options->gamma0;
    schedule.eta0 = options->eta0;
    schedule.decay_factor = options->decay_factor;
    schedule.decay_period = options->decay_period;
    wcache::RunOptions run;
    run.iterations_per_threshold = options->iterations_per_threshold;
    run.seed = options->seed;
    run.trace_stride = options->trace_stride;
    run.telemetry = options->telemetry != 0;
    run.epsilon = options->epsilon;
    auto holder = std::make_unique<wc_learn_run>();
    switch (options->algorithm) {
      case WC_Q_WHITTLE:
        holder->result = wcache::q_whittle_run(p, schedule, run);
        break;
      case WC_QPLUS_WHITTLE:
        holder->result = wcache::qplus_whittle_run(p, schedule, run);
        break;
      case WC_QPLUS_WHITTLE_LFA: {
        require(options->feature_kind == WC_FEATURES_ONEHOT || options->feature_kind == WC_FEATURES_GAUSSIAN_RBF,
                "unknown feature kind");
        wcache::FeatureSpec spec;
        spec.kind = options->feature_kind == WC_FEATURES_ONEHOT ? wcache::FeatureKind::onehot
                                                                : wcache::FeatureKind::gaussian_rbf;
        spec.dim = options->feature_dim;
        spec.bandwidth = options->feature_bandwidth;
        holder->result = wcache::lfa_run(p, schedule, spec, run);
        break;
      }
      default:
        throw wcache::InvalidArgument("unknown algorithm " + std::to_string(options->algorithm));
    }
    *out = holder.release();
  });
}

void wc_learn_run_free(wc_learn_run* run) { delete run; }

size_t wc_learn_run_num_states(const wc_learn_run* run) { return run ? run->result.indices.size() : 0; }

wc_status wc_learn_run_indices(const wc_learn_run* run, double* out, size_t len) {
  return guarded([&] {
    require(run != nullptr, "run is null");
    copy_out(run->result.indices, out, len);
  });
}

size_t wc_learn_run_trace_length(const wc_learn_run* run) { return run ? run->result.trace.size() : 0; }

wc_status wc_learn_run_trace_row(const wc_learn_run* run, size_t i, wc_trace_row* out) {
  return guarded([&] {
    require(run != nullptr && out != nullptr, "run or output is null");
    require(i < run->result.trace.size(), "trace row out of range");
    const auto& row = run->result.trace[i];
    *out = wc_trace_row{row.n, row.threshold, row.w, row.gamma, row.eta, row.lyapunov.value_or(0.0),
                        row.lyapunov ? 1 : 0};
  });
}

long wc_learn_run_total_epochs(const wc_learn_run* run) { return run ? run->result.total_epochs : 0; }

uint64_t wc_learn_run_off_policy_updates(const wc_learn_run* run) {
  return run ? run->result.audit.off_policy_updates() : 0;
}

wc_status wc_workload_zipf(int contents, double kappa, double total_rate, wc_workload** out) {
  return guarded([&] {
    require(out != nullptr, "output is null");
    *out = nullptr;
    auto holder = std::make_unique<wc_workload>();
    holder->workload = wcache::zipf_workload(contents, kappa, total_rate);
    *out = holder.release();
  });
}

wc_status wc_workload_from_trace(const char* path, wc_workload** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "path or output is null");
    *out = nullptr;
    auto parsed = wcache::load_trace(path);
    auto holder = std::make_unique<wc_workload>();
    std::vector<wcache::TraceEvent> events;
    events.reserve(parsed.events.size());
    const auto& labels = parsed.workload.labels;
    for (const auto& ev : parsed.events) {
      const auto it = std::lower_bound(labels.begin(), labels.end(), ev.content_id);
      events.push_back({ev.timestamp, static_cast<std::uint64_t>(it - labels.begin())});
    }
    holder->workload = std::move(parsed.workload);
    holder->events = std::move(events);
    holder->malformed_lines = parsed.malformed_lines;
    *out = holder.release();
  });
}

void wc_workload_free(wc_workload* workload) { delete workload; }

size_t wc_workload_size(const wc_workload* workload) { return workload ? workload->workload.rates.size() : 0; }

wc_status wc_workload_rates(const wc_workload* workload, double* rates, size_t len) {
  return guarded([&] {
    require(workload != nullptr, "workload is null");
    copy_out(workload->workload.rates, rates, len);
  });
}

wc_status wc_workload_labels(const wc_workload* workload, uint64_t* labels, size_t len) {
  return guarded([&] {
    require(workload != nullptr, "workload is null");
    const std::vector<uint64_t> ids(workload->workload.labels.begin(), workload->workload.labels.end());
    copy_out(ids, labels, len);
  });
}

long wc_workload_malformed_lines(const wc_workload* workload) { return workload ? workload->malformed_lines : 0; }

size_t wc_workload_num_events(const wc_workload* workload) {
  return workload && workload->events ? workload->events->size() : 0;
}

wc_status wc_workload_source(const wc_workload* workload, char* buf, size_t len) {
  return guarded([&] {
    require(workload != nullptr && buf != nullptr, "workload or buffer is null");
    const auto& s = workload->workload.source;
    check_len(len, s.size() + 1);
    std::memcpy(buf, s.c_str(), s.size() + 1);
  });
}

wc_status wc_workload_write_trace(const wc_workload* workload, double horizon, uint64_t seed, const char* path,
                                  const char* header, size_t* events_written) {
  return guarded([&] {
    require(workload != nullptr && path != nullptr, "workload or path is null");
    wcache::Rng rng(seed);
    const auto events = wcache::generate_trace(workload->workload, horizon, rng);
    std::ofstream file(path);
    if (!file) throw wcache::IoError(std::string("cannot open '") + path + "' for writing");
    if (header != nullptr) file << header;
    wcache::write_trace(file, events);
    if (!file) throw wcache::IoError(std::string("write to '") + path + "' failed");
    if (events_written != nullptr) *events_written = events.size();
  });
}

wc_status wc_system_create(const wc_workload* workload, double nu, int s_max, int cache_size, int replay_trace,
                           wc_system** out) {
  return guarded([&] {
    require(workload != nullptr && out != nullptr, "workload or output is null");
    *out = nullptr;
    auto holder = std::make_unique<wc_system>();
    holder->config = wcache::make_system(workload->workload, nu, s_max, cache_size);
    if (replay_trace) {
      require(workload->events.has_value(), "workload has no trace events to replay");
      holder->config.trace = workload->events;
      holder->config.validate();
    }
    *out = holder.release();
  });
}

wc_status wc_system_create_explicit(const double* lambda, const double* nu, const int* s_max, size_t contents,
                                    int cache_size, wc_system** out) {
  return guarded([&] {
    require(lambda != nullptr && nu != nullptr && s_max != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    auto holder = std::make_unique<wc_system>();
    holder->config.cache_size = cache_size;
    for (size_t m = 0; m < contents; ++m) holder->config.contents.push_back({lambda[m], nu[m], s_max[m]});
    holder->config.validate();
    *out = holder.release();
  });
}

wc_status wc_system_set_initial_queues(wc_system* system, const int* queues, size_t len) {
  return guarded([&] {
    require(system != nullptr && (queues != nullptr || len == 0), "null argument");
    auto config = system->config;
    config.initial_queues.assign(queues, queues + len);
    config.validate();
    system->config = std::move(config);
  });
}

void wc_system_free(wc_system* system) { delete system; }

size_t wc_system_num_contents(const wc_system* system) { return system ? system->config.contents.size() : 0; }

int wc_system_s_max(const wc_system* system, size_t content) {
  if (system == nullptr || content >= system->config.contents.size()) return -1;
  return system->config.contents[content].s_max;
}

wc_status wc_policy_create(int kind, wc_policy** out) {
  return guarded([&] {
    require(out != nullptr, "output is null");
    *out = nullptr;
    require(kind >= WC_POLICY_WHITTLE_ORACLE && kind <= WC_POLICY_RANDOM, "unknown policy kind");
    auto holder = std::make_unique<wc_policy>();
    holder->spec.kind = static_cast<wcache::PolicyKind>(kind);
    *out = holder.release();
  });
}

wc_status wc_policy_from_name(const char* name, wc_policy** out) {
  return guarded([&] {
    require(name != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    auto holder = std::make_unique<wc_policy>();
    holder->spec.kind = wcache::policy_kind_from_string(name);
    *out = holder.release();
  });
}

wc_status wc_policy_add_table(wc_policy* policy, const double* table, size_t len) {
  return guarded([&] {
    require(policy != nullptr && table != nullptr, "null argument");
    policy->spec.index_tables.emplace_back(table, table + len);
  });
}

void wc_policy_free(wc_policy* policy) { delete policy; }

wc_status wc_run_episode(const wc_system* system, const wc_policy* policy, double horizon, uint64_t seed,
                         wc_episode** out) {
  return guarded([&] {
    require(system != nullptr && policy != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    auto holder = std::make_unique<wc_episode>();
    holder->metrics = wcache::run_episode(system->config, horizon, policy->spec, seed);
    *out = holder.release();
  });
}

wc_status wc_episode_metrics(const wc_episode* episode, wc_metrics* out) {
  return guarded([&] {
    require(episode != nullptr && out != nullptr, "null argument");
    const auto& m = episode->metrics;
    *out = wc_metrics{m.horizon,  m.accumulated_cost, m.average_cost,   m.arrivals,           m.dropped_arrivals,
                      m.departures, m.events,         m.max_cache_size, m.capacity_violations};
  });
}

wc_status wc_episode_occupancy(const wc_episode* episode, size_t content, double* out, size_t len) {
  return guarded([&] {
    require(episode != nullptr, "episode is null");
    require(content < episode->metrics.occupancy.size(), "content out of range");
    copy_out(episode->metrics.occupancy[content], out, len);
  });
}

void wc_episode_free(wc_episode* episode) { delete episode; }

}  // extern "C"
