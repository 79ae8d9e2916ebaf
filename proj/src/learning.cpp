#include "whittle_cache/learning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "whittle_cache/error.hpp"
#include "whittle_cache/whittle.hpp"

namespace wcache {

void StepSizeSchedule::validate() const {
  std::ostringstream os;
  if (!(gamma0 > 0.0) || !std::isfinite(gamma0)) os << "gamma0 must be > 0; ";
  if (!(eta0 > 0.0) || !std::isfinite(eta0)) os << "eta0 must be > 0; ";
  if (kind == ScheduleKind::geometric) {
    if (!(decay_factor >= 1.0) || !std::isfinite(decay_factor)) os << "decay_factor must be >= 1; ";
    if (decay_period < 1) os << "decay_period must be >= 1; ";
  }
  const std::string problems = os.str();
  if (!problems.empty()) throw InvalidArgument("invalid step-size schedule: " + problems.substr(0, problems.size() - 2));
}

StepSizes step_sizes(const StepSizeSchedule& schedule, long n) {
  if (n < 0) throw InvalidArgument("step index must be >= 0");
  const double k = static_cast<double>(n) + 1.0;
  switch (schedule.kind) {
    case ScheduleKind::theorem1:
      return {schedule.gamma0 / std::pow(k, 5.0 / 9.0), schedule.eta0 / std::pow(k, 10.0 / 9.0)};
    case ScheduleKind::geometric: {
      const double shrink = std::pow(schedule.decay_factor, static_cast<double>(n / schedule.decay_period));
      return {schedule.gamma0 / shrink, schedule.eta0 / shrink};
    }
  }
  return {};
}

// ---------------------------------------------------------------- features

FeatureMap::FeatureMap(const PerContentParams& params, const FeatureSpec& spec)
    : spec_(spec), num_states_(params.num_states()) {
  params.validate();
  const int pairs = 2 * num_states_;
  switch (spec.kind) {
    case FeatureKind::onehot:
      dim_ = spec.dim == 0 ? pairs : spec.dim;
      if (dim_ != pairs) {
        throw InvalidArgument("onehot features need dim = 2(s_max+1) = " + std::to_string(pairs));
      }
      table_.assign(static_cast<std::size_t>(pairs) * static_cast<std::size_t>(dim_), 0.0);
      for (int i = 0; i < pairs; ++i) table_[static_cast<std::size_t>(i) * static_cast<std::size_t>(dim_ + 1)] = 1.0;
      break;
    case FeatureKind::gaussian_rbf: {
      dim_ = spec.dim == 0 ? 20 : spec.dim;
      if (dim_ < 2 || dim_ % 2 != 0) throw InvalidArgument("gaussian-rbf dim must be even and >= 2");
      if (spec.bandwidth < 0.0 || !std::isfinite(spec.bandwidth)) {
        throw InvalidArgument("gaussian-rbf bandwidth must be >= 0");
      }
      const int centres = dim_ / 2;
      const double spacing = centres > 1 ? 1.0 / (centres - 1) : 1.0;
      const double h = spec.bandwidth > 0.0 ? spec.bandwidth : spacing;
      table_.assign(static_cast<std::size_t>(pairs) * static_cast<std::size_t>(dim_), 0.0);
      double max_norm = 0.0;
      for (int s = 0; s < num_states_; ++s) {
        const double x = static_cast<double>(s) / params.s_max;
        for (int a = 0; a < 2; ++a) {
          double* row = &table_[static_cast<std::size_t>(2 * s + a) * static_cast<std::size_t>(dim_)];
          double sq = 0.0;
          for (int k = 0; k < centres; ++k) {
            const double c = centres > 1 ? k * spacing : 0.5;
            const double v = std::exp(-(x - c) * (x - c) / (2.0 * h * h));
            row[a * centres + k] = v;
            sq += v * v;
          }
          max_norm = std::max(max_norm, std::sqrt(sq));
        }
      }
      for (double& v : table_) v /= max_norm;
      break;
    }
  }
  for (int i = 0; i < pairs; ++i) {
    const auto row = std::span<const double>(table_).subspan(static_cast<std::size_t>(i) * static_cast<std::size_t>(dim_),
                                                             static_cast<std::size_t>(dim_));
    const double norm = std::sqrt(std::inner_product(row.begin(), row.end(), row.begin(), 0.0));
    if (norm > 1.0 + 1e-12) throw InvalidArgument("feature vector norm exceeds 1");
  }
}

std::span<const double> FeatureMap::operator()(int s, Action a) const {
  if (s < 0 || s >= num_states_) throw InvalidArgument("state " + std::to_string(s) + " outside the feature map");
  return std::span<const double>(table_).subspan(
      static_cast<std::size_t>(2 * s + to_index(a)) * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_));
}

double FeatureMap::dot(int s, Action a, std::span<const double> theta) const {
  const auto phi = (*this)(s, a);
  return std::inner_product(phi.begin(), phi.end(), theta.begin(), 0.0);
}

std::vector<double> features(const FeatureSpec& spec, const PerContentParams& params, int s, Action a) {
  const FeatureMap map(params, spec);
  const auto phi = map(s, a);
  return {phi.begin(), phi.end()};
}

// ------------------------------------------------------------------ states

TabularLearnerState::TabularLearnerState(int num_states)
    : q(static_cast<std::size_t>(num_states), {0.0, 0.0}), w(static_cast<std::size_t>(num_states), 0.0) {}

LfaLearnerState::LfaLearnerState(const PerContentParams& params, const FeatureSpec& spec)
    : features(params, spec),
      theta(static_cast<std::size_t>(features.dim()), 0.0),
      w(static_cast<std::size_t>(params.num_states()), 0.0) {}

QWhittleState::QWhittleState(int num_states)
    : q(static_cast<std::size_t>(num_states),
        std::vector<std::array<double, 2>>(static_cast<std::size_t>(num_states), {0.0, 0.0})),
      w(static_cast<std::size_t>(num_states), 0.0) {}

// ------------------------------------------------------- threshold updates

Action threshold_behaviour(int s, int threshold, Rng& rng) {
  if (s < threshold) return Action::passive;
  if (s > threshold) return Action::active;
  return rng.coin() ? Action::active : Action::passive;
}

namespace {

void check_threshold(const PerContentParams& params, int threshold) {
  if (threshold < 0 || threshold > params.s_max) {
    throw InvalidArgument("threshold " + std::to_string(threshold) + " outside [0, " + std::to_string(params.s_max) +
                          "]");
  }
}

void check_transition(const PerContentParams& params, const Transition& tr) {
  if (tr.from < 0 || tr.from > params.s_max || tr.to < 0 || tr.to > params.s_max || std::abs(tr.to - tr.from) > 1) {
    throw InvalidArgument("transition outside the state space");
  }
}

/// Action whose value the threshold-R learner bootstraps from at s.
template <typename Value>
double bootstrap_value(int s, int threshold, Value value) {
  if (s > threshold) return value(s, Action::active);
  if (s < threshold) return value(s, Action::passive);
  return std::min(value(s, Action::passive), value(s, Action::active));
}

}  // namespace

void qplus_whittle_update(TabularLearnerState& state, const PerContentParams& params, int threshold,
                          const Transition& transition, const StepSizes& steps) {
  check_threshold(params, threshold);
  check_transition(params, transition);
  const auto& q = state.q;
  const double next = bootstrap_value(transition.to, threshold, [&](int s, Action a) {
    return q[static_cast<std::size_t>(s)][to_index(a)];
  });
  double& entry = state.q[static_cast<std::size_t>(transition.from)][to_index(transition.action)];
  entry += steps.gamma * (transition.stage_cost + params.alpha * next - entry);
}

void qplus_whittle_w_update(TabularLearnerState& state, int threshold, const StepSizes& steps) {
  const auto r = static_cast<std::size_t>(threshold);
  state.w.at(r) += steps.eta * (state.q.at(r)[0] - state.q.at(r)[1]);
}

void lfa_update(LfaLearnerState& state, const PerContentParams& params, int threshold, const Transition& transition,
                const StepSizes& steps) {
  check_threshold(params, threshold);
  check_transition(params, transition);
  const double next =
      bootstrap_value(transition.to, threshold, [&](int s, Action a) { return state.q_value(s, a); });
  const auto phi = state.features(transition.from, transition.action);
  const double current = std::inner_product(phi.begin(), phi.end(), state.theta.begin(), 0.0);
  const double delta = transition.stage_cost + params.alpha * next - current;
  for (std::size_t k = 0; k < phi.size(); ++k) state.theta[k] += steps.gamma * delta * phi[k];
}

void lfa_w_update(LfaLearnerState& state, int threshold, const StepSizes& steps) {
  const auto r = static_cast<std::size_t>(threshold);
  state.w.at(r) += steps.eta * (state.q_value(threshold, Action::passive) - state.q_value(threshold, Action::active));
}

std::uint64_t UpdateAudit::off_policy_updates() const {
  std::uint64_t total = 0;
  for (std::size_t r = 0; r < update_counts.size(); ++r) {
    for (std::size_t s = 0; s < update_counts[r].size(); ++s) {
      if (s < r) total += update_counts[r][s][1];
      if (s > r) total += update_counts[r][s][0];
    }
  }
  return total;
}

// ------------------------------------------------------------------- sweeps

namespace {

std::vector<double> flatten(const std::vector<std::array<double, 2>>& q) {
  std::vector<double> out;
  out.reserve(2 * q.size());
  for (const auto& row : q) {
    out.push_back(row[0]);
    out.push_back(row[1]);
  }
  return out;
}

/// Shared epoch loop. `Learner` supplies the update, W update, parameter view
/// and the optional fixed-point oracle for telemetry.
template <typename Learner>
void run_sweep(Learner& learner, const PerContentParams& params, int threshold, const StepSizeSchedule& schedule,
               long iterations, Rng& rng, const RunOptions& options, RunResult& result) {
  check_threshold(params, threshold);
  if (iterations < 0) throw InvalidArgument("iterations must be >= 0");
  auto& st = learner.state;
  const auto r = static_cast<std::size_t>(threshold);
  if (result.audit.update_counts.size() <= r) result.audit.update_counts.resize(r + 1);
  auto& counts = result.audit.update_counts[r];
  counts.assign(static_cast<std::size_t>(params.num_states()), {0, 0});

  FixedPointOracle oracle;
  double w_true = 0.0;
  if (options.telemetry && options.trace_stride > 0 && learner.tabular_parameters()) {
    oracle = tabular_fixed_point_oracle(params, threshold);
    w_true = discounted_threshold_index(params, threshold);
  }

  std::vector<double> view;
  st.current_state = threshold;
  for (long n = 0; n < iterations; ++n) {
    const StepSizes steps = step_sizes(schedule, n);
    if (options.trace_stride > 0 && n % options.trace_stride == 0) {
      TraceRow row{n, threshold, st.w[r], steps.gamma, steps.eta, std::nullopt};
      if (oracle) {
        const TsaSample sample{n, threshold, st.w[r], learner.parameters()};
        row.lyapunov = tsa_telemetry(std::span(&sample, 1), oracle, w_true, schedule).records.front().lyapunov;
      }
      result.trace.push_back(row);
    }
    const int s = st.current_state;
    const Action a = threshold_behaviour(s, threshold, rng);
    const Transition tr = sample_transition(params, s, a, rng, st.w[r]);
    learner.w_update(threshold, steps);
    learner.update(params, threshold, tr, steps);
    ++counts[static_cast<std::size_t>(s)][to_index(a)];
    st.current_state = tr.to;
    ++st.n;
    ++result.total_epochs;
    if (options.observer) {
      learner.fill_parameters(view);
      options.observer(EpochView{n + 1, threshold, st.w[r], step_sizes(schedule, n + 1), view});
    }
  }
}

struct TabularAdapter {
  TabularLearnerState& state;
  bool tabular_parameters() const { return true; }
  std::vector<double> parameters() const { return flatten(state.q); }
  void fill_parameters(std::vector<double>& out) const {
    out.resize(2 * state.q.size());
    for (std::size_t s = 0; s < state.q.size(); ++s) {
      out[2 * s] = state.q[s][0];
      out[2 * s + 1] = state.q[s][1];
    }
  }
  void w_update(int r, const StepSizes& steps) { qplus_whittle_w_update(state, r, steps); }
  void update(const PerContentParams& p, int r, const Transition& tr, const StepSizes& steps) {
    qplus_whittle_update(state, p, r, tr, steps);
  }
};

struct LfaAdapter {
  LfaLearnerState& state;
  bool tabular_parameters() const { return state.features.spec().kind == FeatureKind::onehot; }
  std::vector<double> parameters() const { return state.theta; }
  void fill_parameters(std::vector<double>& out) const { out = state.theta; }
  void w_update(int r, const StepSizes& steps) { lfa_w_update(state, r, steps); }
  void update(const PerContentParams& p, int r, const Transition& tr, const StepSizes& steps) {
    lfa_update(state, p, r, tr, steps);
  }
};

void check_run(const PerContentParams& params, const StepSizeSchedule& schedule, const RunOptions& options) {
  params.validate();
  schedule.validate();
  if (options.iterations_per_threshold < 0) throw InvalidArgument("iterations per threshold must be >= 0");
  if (options.trace_stride < 0) throw InvalidArgument("trace stride must be >= 0");
}

}  // namespace

void qplus_whittle_sweep(TabularLearnerState& state, const PerContentParams& params, int threshold,
                         const StepSizeSchedule& schedule, long iterations, Rng& rng, const RunOptions& options,
                         RunResult& result) {
  TabularAdapter learner{state};
  run_sweep(learner, params, threshold, schedule, iterations, rng, options, result);
}

void lfa_sweep(LfaLearnerState& state, const PerContentParams& params, int threshold, const StepSizeSchedule& schedule,
               long iterations, Rng& rng, const RunOptions& options, RunResult& result) {
  LfaAdapter learner{state};
  run_sweep(learner, params, threshold, schedule, iterations, rng, options, result);
}

RunResult qplus_whittle_run(const PerContentParams& params, const StepSizeSchedule& schedule,
                            const RunOptions& options) {
  check_run(params, schedule, options);
  TabularLearnerState state(params.num_states());
  Rng rng(options.seed);
  RunResult result;
  for (int r = 0; r <= params.s_max; ++r) {
    if (r > 0) state.w[static_cast<std::size_t>(r)] = state.w[static_cast<std::size_t>(r - 1)];
    qplus_whittle_sweep(state, params, r, schedule, options.iterations_per_threshold, rng, options, result);
  }
  result.indices = state.w;
  result.final_parameters = flatten(state.q);
  return result;
}

RunResult lfa_run(const PerContentParams& params, const StepSizeSchedule& schedule, const FeatureSpec& spec,
                  const RunOptions& options) {
  check_run(params, schedule, options);
  LfaLearnerState state(params, spec);
  Rng rng(options.seed);
  RunResult result;
  for (int r = 0; r <= params.s_max; ++r) {
    if (r > 0) state.w[static_cast<std::size_t>(r)] = state.w[static_cast<std::size_t>(r - 1)];
    lfa_sweep(state, params, r, schedule, options.iterations_per_threshold, rng, options, result);
  }
  result.indices = state.w;
  result.final_parameters = state.theta;
  return result;
}

// ---------------------------------------------------------------- Q-Whittle

void q_whittle_step(QWhittleState& state, const Transition& transition, const StepSizes& steps) {
  const auto n = state.w.size();
  if (transition.from < 0 || static_cast<std::size_t>(transition.from) >= n || transition.to < 0 ||
      static_cast<std::size_t>(transition.to) >= n) {
    throw InvalidArgument("transition outside the state space");
  }
  const auto s = static_cast<std::size_t>(transition.from);
  const auto next = static_cast<std::size_t>(transition.to);
  const std::size_t a = to_index(transition.action);
  const double queue = static_cast<double>(transition.from);
  // index step first, from the pre-update table of the visited state
  const double w_delta = steps.eta * (state.q[s][s][0] - state.q[s][s][1]);
  for (std::size_t k = 0; k < n; ++k) {
    auto& q = state.q[k];
    const double cost = queue - (a == 0 ? state.w[k] : 0.0);
    const double target = cost + std::min(q[next][0], q[next][1]) - q[0][0];
    q[s][a] += steps.gamma * (target - q[s][a]);
  }
  state.w[s] += w_delta;
}

Action q_whittle_behaviour(const QWhittleState& state, int s, double epsilon, Rng& rng) {
  if (rng.uniform() < epsilon) return rng.coin() ? Action::active : Action::passive;
  const auto& row = state.q.at(static_cast<std::size_t>(s)).at(static_cast<std::size_t>(s));
  return row[1] < row[0] ? Action::active : Action::passive;
}

RunResult q_whittle_run(const PerContentParams& params, const StepSizeSchedule& schedule, const RunOptions& options) {
  check_run(params, schedule, options);
  if (!(options.epsilon >= 0.0 && options.epsilon <= 1.0)) throw InvalidArgument("epsilon must lie in [0, 1]");
  QWhittleState state(params.num_states());
  Rng rng(options.seed);
  RunResult result;
  result.audit.update_counts.assign(1, std::vector<std::array<std::uint64_t, 2>>(
                                           static_cast<std::size_t>(params.num_states()), {0, 0}));
  const long total = options.iterations_per_threshold * params.num_states();
  for (long n = 0; n < total; ++n) {
    const StepSizes steps = step_sizes(schedule, n);
    const int s = state.current_state;
    if (options.trace_stride > 0 && n % options.trace_stride == 0) {
      result.trace.push_back(TraceRow{n, s, state.w[static_cast<std::size_t>(s)], steps.gamma, steps.eta, std::nullopt});
    }
    const Action a = q_whittle_behaviour(state, s, options.epsilon, rng);
    const Transition tr = sample_transition(params, s, a, rng);
    q_whittle_step(state, tr, steps);
    ++result.audit.update_counts[0][static_cast<std::size_t>(s)][to_index(a)];
    state.current_state = tr.to;
    ++state.n;
    ++result.total_epochs;
    if (options.observer) {
      const std::vector<double> p = flatten(state.q[static_cast<std::size_t>(s)]);
      options.observer(EpochView{n + 1, s, state.w[static_cast<std::size_t>(s)], step_sizes(schedule, n + 1), p});
    }
  }
  result.indices = state.w;
  for (const auto& table : state.q) {
    const auto flat = flatten(table);
    result.final_parameters.insert(result.final_parameters.end(), flat.begin(), flat.end());
  }
  return result;
}

// ---------------------------------------------------------------- telemetry

FixedPointOracle tabular_fixed_point_oracle(const PerContentParams& params, int threshold) {
  params.validate();
  check_threshold(params, threshold);
  return [params, threshold](double w) { return flatten(threshold_q_fixed_point(params, threshold, w).q); };
}

double lyapunov_value(const StepSizes& steps, double theta_residual_sq, double w_residual_sq) {
  return steps.eta / steps.gamma * theta_residual_sq + w_residual_sq;
}

TsaTelemetry tsa_telemetry(std::span<const TsaSample> samples, const FixedPointOracle& oracle, double w_true,
                           const StepSizeSchedule& schedule) {
  schedule.validate();
  TsaTelemetry out;
  out.records.reserve(samples.size());
  for (const TsaSample& sample : samples) {
    TsaRecord rec;
    rec.n = sample.n;
    rec.threshold = sample.threshold;
    rec.w_residual_sq = (sample.w - w_true) * (sample.w - w_true);
    if (oracle) {
      const std::vector<double> f = oracle(sample.w);
      if (f.size() != sample.parameters.size()) {
        throw InvalidArgument("fixed point and parameter dimensions differ");
      }
      double sq = 0.0;
      for (std::size_t k = 0; k < f.size(); ++k) sq += (sample.parameters[k] - f[k]) * (sample.parameters[k] - f[k]);
      rec.theta_residual_sq = sq;
      rec.lyapunov = lyapunov_value(step_sizes(schedule, sample.n), sq, rec.w_residual_sq);
    }
    out.records.push_back(rec);
  }
  return out;
}

}  // namespace wcache
