/* C interface to the whittle_cache library. Every call returns a wc_status;
 * on failure wc_last_error() describes the problem for the calling thread.
 * Objects are opaque and owned by the caller once created. */
#ifndef WHITTLE_CACHE_H
#define WHITTLE_CACHE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(WHITTLE_CACHE_BUILDING)
#define WC_API __declspec(dllexport)
#else
#define WC_API __declspec(dllimport)
#endif
#else
#define WC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum wc_status {
  WC_OK = 0,
  WC_INVALID_ARGUMENT = 1,
  WC_DEGENERATE_DENOMINATOR = 2,
  WC_MAX_ITERATIONS_EXCEEDED = 3,
  WC_BRACKET_NOT_FOUND = 4,
  WC_DEAD_SYSTEM = 5,
  WC_EMPTY_TRACE = 6,
  WC_NON_MONOTONIC_TIMESTAMPS = 7,
  WC_PARSE_ERROR = 8,
  WC_IO_ERROR = 9,
  WC_BUFFER_TOO_SMALL = 10,
  WC_INTERNAL_ERROR = 99
} wc_status;

WC_API const char* wc_version(void);
/** Message of the last failed call on this thread ("" when none). */
WC_API const char* wc_last_error(void);
/** Integer context of the last failure: the threshold for
 * WC_DEGENERATE_DENOMINATOR, the line for WC_NON_MONOTONIC_TIMESTAMPS, else 0. */
WC_API long wc_last_error_detail(void);
WC_API const char* wc_status_name(wc_status status);

/** Independent stream seed derived from (master, stream). */
WC_API uint64_t wc_derive_seed(uint64_t master, uint64_t stream);

/* ---------------------------------------------------------------- index */

typedef struct wc_params {
  double lambda;
  double nu;
  int s_max;
  double alpha;
} wc_params;

WC_API void wc_params_default(wc_params* params);

/** len must be s_max + 1. */
WC_API wc_status wc_stationary_distribution(const wc_params* params, int threshold, double* out, size_t len);
WC_API wc_status wc_whittle_index(const wc_params* params, int threshold, double* out);
/** Fills W(0..s_max); len must be s_max + 1. */
WC_API wc_status wc_whittle_table(const wc_params* params, double* out, size_t len, int* indexable);
WC_API wc_status wc_indifference_index(const wc_params* params, int state, double tol, double* out);
WC_API wc_status wc_discounted_threshold_index(const wc_params* params, int threshold, double* out);
/** Discounted greedy actions (0 passive, 1 active) for multiplier w. */
WC_API wc_status wc_discounted_greedy_policy(const wc_params* params, double w, double tol, int* actions, size_t len);
/** Average-cost passive flags for multiplier w. */
WC_API wc_status wc_passive_set(const wc_params* params, double w, int* passive, size_t len);
/** *is_threshold = 0 when the pattern is not of threshold type. */
WC_API wc_status wc_threshold_of_policy(const int* actions, size_t len, int* threshold, int* is_threshold);

/* ------------------------------------------------------------- learning */

typedef enum wc_algorithm { WC_Q_WHITTLE = 0, WC_QPLUS_WHITTLE = 1, WC_QPLUS_WHITTLE_LFA = 2 } wc_algorithm;
typedef enum wc_schedule_kind { WC_SCHEDULE_THEOREM1 = 0, WC_SCHEDULE_GEOMETRIC = 1 } wc_schedule_kind;
typedef enum wc_feature_kind { WC_FEATURES_ONEHOT = 0, WC_FEATURES_GAUSSIAN_RBF = 1 } wc_feature_kind;

typedef struct wc_learn_options {
  int algorithm;      /* wc_algorithm */
  int schedule_kind;  /* wc_schedule_kind */
  double gamma0;
  double eta0;
  double decay_factor;
  long decay_period;
  int feature_kind; /* wc_feature_kind, LFA only */
  int feature_dim;  /* 0 = default */
  double feature_bandwidth;
  long iterations_per_threshold;
  uint64_t seed;
  long trace_stride; /* 0 = no trace */
  int telemetry;     /* nonzero: Lyapunov values in the trace where computable */
  double epsilon;    /* Q-Whittle exploration */
} wc_learn_options;

typedef struct wc_trace_row {
  long n;
  int threshold;
  double w;
  double gamma;
  double eta;
  double lyapunov;
  int has_lyapunov;
} wc_trace_row;

typedef struct wc_learn_run wc_learn_run;

WC_API void wc_learn_options_default(wc_learn_options* options);
WC_API wc_status wc_learn(const wc_params* params, const wc_learn_options* options, wc_learn_run** out);
WC_API void wc_learn_run_free(wc_learn_run* run);
WC_API size_t wc_learn_run_num_states(const wc_learn_run* run);
WC_API wc_status wc_learn_run_indices(const wc_learn_run* run, double* out, size_t len);
WC_API size_t wc_learn_run_trace_length(const wc_learn_run* run);
WC_API wc_status wc_learn_run_trace_row(const wc_learn_run* run, size_t i, wc_trace_row* out);
WC_API long wc_learn_run_total_epochs(const wc_learn_run* run);
WC_API uint64_t wc_learn_run_off_policy_updates(const wc_learn_run* run);

/* ------------------------------------------------------------- workload */

typedef struct wc_workload wc_workload;

WC_API wc_status wc_workload_zipf(int contents, double kappa, double total_rate, wc_workload** out);
/** Parses a request trace and keeps its events for replay. */
WC_API wc_status wc_workload_from_trace(const char* path, wc_workload** out);
WC_API void wc_workload_free(wc_workload* workload);
WC_API size_t wc_workload_size(const wc_workload* workload);
WC_API wc_status wc_workload_rates(const wc_workload* workload, double* rates, size_t len);
WC_API wc_status wc_workload_labels(const wc_workload* workload, uint64_t* labels, size_t len);
WC_API long wc_workload_malformed_lines(const wc_workload* workload);
WC_API size_t wc_workload_num_events(const wc_workload* workload);
/** Copies the workload's source description into buf (NUL-terminated). */
WC_API wc_status wc_workload_source(const wc_workload* workload, char* buf, size_t len);
/** Samples Poisson arrivals on [0, horizon) and writes them in trace format,
 * preceded by `header` verbatim when it is not NULL. */
WC_API wc_status wc_workload_write_trace(const wc_workload* workload, double horizon, uint64_t seed,
                                         const char* path, const char* header, size_t* events_written);

/* ------------------------------------------------------------ simulator */

typedef enum wc_policy_kind {
  WC_POLICY_WHITTLE_ORACLE = 0,
  WC_POLICY_WHITTLE_LEARNED = 1,
  WC_POLICY_LRU = 2,
  WC_POLICY_LFU = 3,
  WC_POLICY_RANDOM = 4
} wc_policy_kind;

typedef struct wc_system wc_system;
typedef struct wc_policy wc_policy;
typedef struct wc_episode wc_episode;

typedef struct wc_metrics {
  double horizon;
  double accumulated_cost;
  double average_cost;
  long arrivals;
  long dropped_arrivals;
  long departures;
  long events;
  int max_cache_size;
  long capacity_violations;
} wc_metrics;

/** One content per workload entry, shared nu and s_max. With replay_trace
 * nonzero the workload's trace events drive arrivals. */
WC_API wc_status wc_system_create(const wc_workload* workload, double nu, int s_max, int cache_size,
                                  int replay_trace, wc_system** out);
WC_API wc_status wc_system_create_explicit(const double* lambda, const double* nu, const int* s_max, size_t contents,
                                           int cache_size, wc_system** out);
WC_API wc_status wc_system_set_initial_queues(wc_system* system, const int* queues, size_t len);
WC_API void wc_system_free(wc_system* system);
WC_API size_t wc_system_num_contents(const wc_system* system);
WC_API int wc_system_s_max(const wc_system* system, size_t content);

WC_API wc_status wc_policy_create(int kind, wc_policy** out);
WC_API wc_status wc_policy_from_name(const char* name, wc_policy** out);
/** Index table for one content, states 0..s_max. Contents are appended in order. */
WC_API wc_status wc_policy_add_table(wc_policy* policy, const double* table, size_t len);
WC_API void wc_policy_free(wc_policy* policy);

WC_API wc_status wc_run_episode(const wc_system* system, const wc_policy* policy, double horizon, uint64_t seed,
                                wc_episode** out);
WC_API wc_status wc_episode_metrics(const wc_episode* episode, wc_metrics* out);
/** Time spent in each state 0..s_max by one content. */
WC_API wc_status wc_episode_occupancy(const wc_episode* episode, size_t content, double* out, size_t len);
WC_API void wc_episode_free(wc_episode* episode);

#ifdef __cplusplus
}
#endif

#endif /* WHITTLE_CACHE_H */
