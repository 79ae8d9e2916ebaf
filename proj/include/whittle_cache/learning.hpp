#pragma once

// Whittle-index learners for a single content:
//
//  * Q-Whittle: average-cost relative Q-learning, epsilon-greedy, one Q table
//    per target state with reference value Q(0,0).
//  * Q+-Whittle: discounted Q-learning restricted to the threshold policy R,
//    sweeping R = 0..s_max with warm starts.
//  * Q+-Whittle-LFA: the same sweep with Q(s,a) = phi(s,a)^T theta.
//
// Q/theta move on the fast step size gamma_n, the index estimate W on the
// slow step size eta_n. The step index n restarts at every threshold sweep.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "whittle_cache/mdp.hpp"

namespace wcache {

enum class ScheduleKind { theorem1, geometric };

struct StepSizeSchedule {
  ScheduleKind kind = ScheduleKind::geometric;
  double gamma0 = 0.1;
  double eta0 = 0.01;
  double decay_factor = 1.1;  ///< geometric only
  long decay_period = 1000;   ///< geometric only

  void validate() const;
};

struct StepSizes {
  double gamma = 0.0;
  double eta = 0.0;
};

/// theorem1: gamma0/(n+1)^(5/9), eta0/(n+1)^(10/9).
/// geometric: both divided by decay_factor once every decay_period steps.
StepSizes step_sizes(const StepSizeSchedule& schedule, long n);

enum class FeatureKind { onehot, gaussian_rbf };

struct FeatureSpec {
  FeatureKind kind = FeatureKind::onehot;
  int dim = 0;             ///< 0 selects the default: 2(s_max+1) for onehot, 20 for gaussian-rbf
  double bandwidth = 0.0;  ///< gaussian-rbf width on the normalised state axis, 0 = centre spacing
};

/// Precomputed feature vectors for every (s, a) of one content. Construction
/// fails with InvalidArgument if any vector has Euclidean norm above 1.
class FeatureMap {
 public:
  FeatureMap(const PerContentParams& params, const FeatureSpec& spec);

  int dim() const noexcept { return dim_; }
  int num_states() const noexcept { return num_states_; }
  const FeatureSpec& spec() const noexcept { return spec_; }
  std::span<const double> operator()(int s, Action a) const;
  double dot(int s, Action a, std::span<const double> theta) const;

 private:
  FeatureSpec spec_;
  int dim_ = 0;
  int num_states_ = 0;
  std::vector<double> table_;  // [(2 s + a) * dim + k]
};

/// Single feature vector; builds the full map, so prefer FeatureMap in loops.
std::vector<double> features(const FeatureSpec& spec, const PerContentParams& params, int s, Action a);

struct TabularLearnerState {
  std::vector<std::array<double, 2>> q;
  std::vector<double> w;
  long n = 0;
  int current_state = 0;

  explicit TabularLearnerState(int num_states);
};

struct LfaLearnerState {
  FeatureMap features;
  std::vector<double> theta;
  std::vector<double> w;
  long n = 0;
  int current_state = 0;

  LfaLearnerState(const PerContentParams& params, const FeatureSpec& spec);
  double q_value(int s, Action a) const { return features.dot(s, a, theta); }
};

/// Behaviour of the threshold-R learners: passive below R, active above, a
/// fair coin at R. Consumes one uniform only at s == R.
Action threshold_behaviour(int s, int threshold, Rng& rng);

/// Threshold-gated discounted update of the single entry Q(from, action).
/// The cost term is transition.stage_cost, which carries the subsidy W_n(R)
/// for passive moves.
void qplus_whittle_update(TabularLearnerState& state, const PerContentParams& params, int threshold,
                          const Transition& transition, const StepSizes& steps);

/// W(R) += eta * (Q(R,0) - Q(R,1)).
void qplus_whittle_w_update(TabularLearnerState& state, int threshold, const StepSizes& steps);

/// Semi-gradient update theta += gamma * delta * phi(from, action).
void lfa_update(LfaLearnerState& state, const PerContentParams& params, int threshold, const Transition& transition,
                const StepSizes& steps);

/// W(R) += eta * (phi(R,0) - phi(R,1))^T theta.
void lfa_w_update(LfaLearnerState& state, int threshold, const StepSizes& steps);

/// What an observer sees after each epoch: n updates have been applied in the
/// current sweep, `parameters` is Q flattened as [2 s + a] or theta.
struct EpochView {
  long n = 0;
  int threshold = 0;
  double w = 0.0;
  StepSizes steps;  ///< step sizes that the next update will use
  std::span<const double> parameters;
};

using EpochObserver = std::function<void(const EpochView&)>;

struct TraceRow {
  long n = 0;
  int threshold = 0;
  double w = 0.0;
  double gamma = 0.0;
  double eta = 0.0;
  std::optional<double> lyapunov;
};

/// update_counts[R][s][a]: how often Q(s,a) (or the direction phi(s,a)) was
/// updated during the sweep for threshold R.
struct UpdateAudit {
  std::vector<std::vector<std::array<std::uint64_t, 2>>> update_counts;

  /// Updates to Q(s,1) with s < R or Q(s,0) with s > R, over all sweeps.
  std::uint64_t off_policy_updates() const;
};

struct RunOptions {
  long iterations_per_threshold = 0;
  std::uint64_t seed = 0;
  long trace_stride = 0;      ///< 0 disables the trace
  bool telemetry = false;     ///< fill TraceRow::lyapunov where the fixed point is computable
  double epsilon = 0.1;       ///< Q-Whittle exploration only
  EpochObserver observer;     ///< called after every epoch when set
};

struct RunResult {
  std::vector<double> indices;
  std::vector<TraceRow> trace;
  UpdateAudit audit;
  long total_epochs = 0;
  std::vector<double> final_parameters;
};

/// One threshold sweep of T epochs starting from s = R, in place.
void qplus_whittle_sweep(TabularLearnerState& state, const PerContentParams& params, int threshold,
                         const StepSizeSchedule& schedule, long iterations, Rng& rng, const RunOptions& options,
                         RunResult& result);
void lfa_sweep(LfaLearnerState& state, const PerContentParams& params, int threshold, const StepSizeSchedule& schedule,
               long iterations, Rng& rng, const RunOptions& options, RunResult& result);

/// Sweeps R = 0..s_max, warm-starting each sweep from the previous Q and W.
RunResult qplus_whittle_run(const PerContentParams& params, const StepSizeSchedule& schedule,
                            const RunOptions& options);
RunResult lfa_run(const PerContentParams& params, const StepSizeSchedule& schedule, const FeatureSpec& spec,
                  const RunOptions& options);

struct QWhittleState {
  std::vector<std::vector<std::array<double, 2>>> q;  ///< q[k] is the table for target state k
  std::vector<double> w;
  long n = 0;
  int current_state = 0;

  explicit QWhittleState(int num_states);
};

/// Relative Q-learning step on every target table followed by the index step
/// at the visited state: Q_k(s,a) += gamma (s - (1-a) W(k) + min_b Q_k(s',b)
/// - Q_k(0,0) - Q_k(s,a)), W(s) += eta (Q_s(s,0) - Q_s(s,1)).
void q_whittle_step(QWhittleState& state, const Transition& transition, const StepSizes& steps);

Action q_whittle_behaviour(const QWhittleState& state, int s, double epsilon, Rng& rng);

/// (s_max+1) * iterations_per_threshold epochs from s = 0.
RunResult q_whittle_run(const PerContentParams& params, const StepSizeSchedule& schedule, const RunOptions& options);

struct TsaRecord {
  long n = 0;
  int threshold = 0;
  std::optional<double> theta_residual_sq;  ///< ||theta_n - f(W_n)||^2 when f is available
  double w_residual_sq = 0.0;               ///< (W_n - W(R))^2
  std::optional<double> lyapunov;           ///< (eta/gamma) ||.||^2 + (W_n - W(R))^2
};

struct TsaTelemetry {
  std::vector<TsaRecord> records;
};

/// Maps a multiplier W to the fixed-point parameters f(W).
using FixedPointOracle = std::function<std::vector<double>(double w)>;

/// f(W) for tabular/onehot parameters: the threshold-R Q fixed point flattened as [2 s + a].
FixedPointOracle tabular_fixed_point_oracle(const PerContentParams& params, int threshold);

struct TsaSample {
  long n = 0;
  int threshold = 0;
  double w = 0.0;
  std::vector<double> parameters;
};

/// Residuals and the Lyapunov value for each sample. An empty oracle yields
/// only the index residual.
TsaTelemetry tsa_telemetry(std::span<const TsaSample> samples, const FixedPointOracle& oracle, double w_true,
                           const StepSizeSchedule& schedule);

double lyapunov_value(const StepSizes& steps, double theta_residual_sq, double w_residual_sq);

}  // namespace wcache
