#include "whittle_cache/whittle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "whittle_cache/error.hpp"

namespace wcache {

namespace {

constexpr double kDegenerateDenominator = 1e-12;
constexpr double kIndexTieTolerance = 1e-9;
// Self-loop weight of the aperiodicity transform used by relative value iteration.
constexpr double kAperiodicMix = 0.5;
// Relative value iteration replaces its iterate by an exact policy evaluation this often.
constexpr long kPolicyEvaluationPeriod = 512;
constexpr int kPolicyIterationRounds = 32;

void check_threshold(const PerContentParams& params, int threshold, int lowest) {
  if (threshold < lowest || threshold > params.s_max) {
    throw InvalidArgument("threshold " + std::to_string(threshold) + " outside [" + std::to_string(lowest) + ", " +
                          std::to_string(params.s_max) + "]");
  }
}

// Probabilities of the three possible moves from s under a.
struct Moves {
  double up;
  double down;
  double stay;
};

Moves moves(const PerContentParams& params, int s, Action a) {
  return {up_probability(params, s, a), down_probability(params, s, a), self_probability(params, s, a)};
}

// Expected value of u at the next epoch.
double expect_next(const PerContentParams& params, std::span<const double> u, int s, Action a) {
  const Moves m = moves(params, s, a);
  double e = m.stay * u[s];
  if (m.up > 0.0) e += m.up * u[s + 1];
  if (m.down > 0.0) e += m.down * u[s - 1];
  return e;
}

double sup_abs(std::span<const double> u) {
  double m = 0.0;
  for (double x : u) m = std::max(m, std::abs(x));
  return m;
}

// Guard against tolerances finer than the rounding noise of the iterates.
double effective_tolerance(double tol, double scale) {
  return std::max(tol, 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, scale));
}

// Bias (h(0) = 0) of a stationary policy. Every policy reaches s_max, so
// anchoring there leaves a nonsingular tridiagonal system in h(0..s_max-1),
// solved once for the cost and once for the gain column (h = ha + g hb).
std::vector<double> policy_bias(const PerContentParams& params, double w, const std::vector<Action>& policy) {
  const int n = params.num_states();
  const int m = n - 1;
  std::vector<double> sub(static_cast<std::size_t>(m)), diag(sub.size()), sup(sub.size());
  std::vector<double> ha(sub.size()), hb(sub.size());
  for (int s = 0; s < m; ++s) {
    const Moves mv = moves(params, s, policy[static_cast<std::size_t>(s)]);
    sub[static_cast<std::size_t>(s)] = -mv.down;
    diag[static_cast<std::size_t>(s)] = mv.up + mv.down;
    sup[static_cast<std::size_t>(s)] = -mv.up;
    ha[static_cast<std::size_t>(s)] = stage_cost(s, policy[static_cast<std::size_t>(s)], w);
    hb[static_cast<std::size_t>(s)] = -1.0;
  }
  // Thomas sweep; h(s_max) = 0 drops the last super-diagonal term
  for (int s = 1; s < m; ++s) {
    const auto i = static_cast<std::size_t>(s);
    const double f = sub[i] / diag[i - 1];
    diag[i] -= f * sup[i - 1];
    ha[i] -= f * ha[i - 1];
    hb[i] -= f * hb[i - 1];
  }
  for (int s = m - 1; s >= 0; --s) {
    const auto i = static_cast<std::size_t>(s);
    if (s + 1 < m) {
      ha[i] -= sup[i] * ha[i + 1];
      hb[i] -= sup[i] * hb[i + 1];
    }
    ha[i] /= diag[i];
    hb[i] /= diag[i];
  }
  const Moves top = moves(params, m, policy[static_cast<std::size_t>(m)]);
  const double gain = (stage_cost(m, policy[static_cast<std::size_t>(m)], w) + top.down * ha[static_cast<std::size_t>(m - 1)]) /
                      (1.0 - top.down * hb[static_cast<std::size_t>(m - 1)]);
  std::vector<double> h(static_cast<std::size_t>(n), 0.0);
  for (int s = 0; s < m; ++s) h[static_cast<std::size_t>(s)] = ha[static_cast<std::size_t>(s)] + gain * hb[static_cast<std::size_t>(s)];
  const double ref = h[0];
  for (double& x : h) x -= ref;
  return h;
}

/// Span of T h - h for the undiscounted Bellman operator.
double bellman_span(const PerContentParams& params, double w, const std::vector<double>& h) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t s = 0; s < h.size(); ++s) {
    const int si = static_cast<int>(s);
    const double q0 = stage_cost(si, Action::passive, w) + expect_next(params, h, si, Action::passive);
    const double q1 = stage_cost(si, Action::active, w) + expect_next(params, h, si, Action::active);
    const double d = std::min(q0, q1) - h[s];
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  return hi - lo;
}

/// Greedy policy for h. With `current` given, an action only changes on a
/// strict improvement beyond a scaled tie band (the Howard rule); otherwise
/// ties go passive.
std::vector<Action> improve_policy(const PerContentParams& params, double w, const std::vector<double>& h,
                                   const std::vector<Action>& current) {
  const double tie = 1e-12 * std::max(1.0, sup_abs(h));
  std::vector<Action> out(h.size());
  for (std::size_t s = 0; s < h.size(); ++s) {
    const int si = static_cast<int>(s);
    const double q0 = stage_cost(si, Action::passive, w) + expect_next(params, h, si, Action::passive);
    const double q1 = stage_cost(si, Action::active, w) + expect_next(params, h, si, Action::active);
    if (current.empty()) {
      out[s] = q0 <= q1 ? Action::passive : Action::active;
    } else {
      const double keep = current[s] == Action::passive ? q0 : q1;
      out[s] = keep <= std::min(q0, q1) + tie ? current[s] : (q0 < q1 ? Action::passive : Action::active);
    }
  }
  return out;
}

double mean_state(const std::vector<double>& probs) {
  double m = 0.0;
  for (std::size_t s = 0; s < probs.size(); ++s) m += static_cast<double>(s) * probs[s];
  return m;
}

double prefix_mass(const std::vector<double>& probs, int last) {
  double m = 0.0;
  for (int s = 0; s <= last; ++s) m += probs[static_cast<std::size_t>(s)];
  return m;
}

}  // namespace

StationaryDist stationary_distribution(const PerContentParams& params, int threshold) {
  params.validate();
  check_threshold(params, threshold, -1);

  StationaryDist dist{threshold, std::vector<double>(static_cast<std::size_t>(params.num_states()), 0.0)};
  if (threshold == params.s_max) {
    dist.probs.back() = 1.0;
    return dist;
  }

  // At s = 0 the death rate vanishes for either action, so the always-active
  // chain coincides with threshold 0.
  const int base = std::max(threshold, 0);
  const double lambda = params.lambda;
  const double nu = params.nu;
  auto down_at = [&](int s) { return nu * s / (lambda + nu * s); };
  auto up_at = [&](int s) { return lambda / (lambda + nu * s); };

  // Unnormalised weights relative to the state just above the base.
  std::vector<double>& w = dist.probs;
  w[static_cast<std::size_t>(base + 1)] = 1.0;
  w[static_cast<std::size_t>(base)] = down_at(base + 1);
  for (int s = base + 2; s <= params.s_max; ++s) {
    w[static_cast<std::size_t>(s)] = w[static_cast<std::size_t>(s - 1)] * up_at(s - 1) / down_at(s);
  }
  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  return dist;
}

double whittle_index_closed_form(const PerContentParams& params, int threshold) {
  params.validate();
  check_threshold(params, threshold, 0);
  const StationaryDist at = stationary_distribution(params, threshold);
  const StationaryDist below = stationary_distribution(params, threshold - 1);

  const double numerator = mean_state(at.probs) - mean_state(below.probs);
  const double denominator = prefix_mass(at.probs, threshold) - prefix_mass(below.probs, threshold - 1);
  if (std::abs(denominator) < kDegenerateDenominator) throw DegenerateDenominator(threshold, denominator);
  return numerator / denominator;
}

WhittleTable whittle_table(const PerContentParams& params) {
  params.validate();
  WhittleTable table{params, {}, true};
  table.indices.reserve(static_cast<std::size_t>(params.num_states()));
  for (int r = 0; r <= params.s_max; ++r) {
    table.indices.push_back(whittle_index_closed_form(params, r));
    if (r > 0 && table.indices[static_cast<std::size_t>(r)] < table.indices[static_cast<std::size_t>(r - 1)] -
                                                                 kIndexTieTolerance) {
      table.indexable = false;
    }
  }
  return table;
}

ValueFunctions discounted_value_iteration(const PerContentParams& params, double w, double tol, long max_iterations,
                                          std::span<const double> initial) {
  params.validate();
  if (!(tol > 0.0)) throw InvalidArgument("tolerance must be > 0");
  const auto n = static_cast<std::size_t>(params.num_states());
  if (!initial.empty() && initial.size() != n) throw InvalidArgument("initial value vector has the wrong length");

  std::vector<double> j = initial.empty() ? std::vector<double>(n, 0.0) : std::vector<double>(initial.begin(), initial.end());
  std::vector<double> next(n);
  double residual = std::numeric_limits<double>::infinity();
  long it = 0;
  while (it < max_iterations) {
    ++it;
    residual = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const int si = static_cast<int>(s);
      const double q0 = stage_cost(si, Action::passive, w) + params.alpha * expect_next(params, j, si, Action::passive);
      const double q1 = stage_cost(si, Action::active, w) + params.alpha * expect_next(params, j, si, Action::active);
      next[s] = std::min(q0, q1);
      residual = std::max(residual, std::abs(next[s] - j[s]));
    }
    j.swap(next);
    if (residual <= effective_tolerance(tol, sup_abs(j))) break;
  }
  if (residual > effective_tolerance(tol, sup_abs(j))) {
    throw MaxIterationsExceeded("discounted value iteration", it, residual);
  }

  ValueFunctions out;
  out.iterations = it;
  out.q.resize(n);
  out.j.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const int si = static_cast<int>(s);
    for (int a = 0; a < 2; ++a) {
      const Action act = action_from_index(a);
      out.q[s][static_cast<std::size_t>(a)] = stage_cost(si, act, w) + params.alpha * expect_next(params, j, si, act);
    }
    out.j[s] = std::min(out.q[s][0], out.q[s][1]);
  }
  return out;
}

ValueFunctions relative_value_iteration(const PerContentParams& params, double w, double tol, long max_iterations) {
  params.validate();
  if (!(tol > 0.0)) throw InvalidArgument("tolerance must be > 0");
  const auto n = static_cast<std::size_t>(params.num_states());

  std::vector<double> h(n, 0.0);
  std::vector<double> next(n);
  double span = std::numeric_limits<double>::infinity();
  double lo = 0.0;
  double hi = 0.0;
  long it = 0;
  while (it < max_iterations) {
    ++it;
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (std::size_t s = 0; s < n; ++s) {
      const int si = static_cast<int>(s);
      double best = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 2; ++a) {
        const Action act = action_from_index(a);
        best = std::min(best, stage_cost(si, act, w) + expect_next(params, h, si, act));
      }
      next[s] = (1.0 - kAperiodicMix) * h[s] + kAperiodicMix * best;
      const double d = next[s] - h[s];
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    const double ref = next[0];
    for (double& x : next) x -= ref;
    h.swap(next);
    span = hi - lo;
    if (span <= effective_tolerance(tol, sup_abs(h))) break;
    if (it % kPolicyEvaluationPeriod == 0) {
      // Nearly decomposable chains (a policy that parks at the cap) make plain
      // value iteration crawl, so run a few policy-iteration rounds from the
      // greedy policy. The anchored bias solve loses everything to
      // cancellation on strongly drifting chains, hence the acceptance test.
      std::vector<Action> policy = improve_policy(params, w, h, {});
      std::vector<double> candidate;
      bool settled = false;
      for (int round = 0; round < kPolicyIterationRounds && !settled; ++round) {
        candidate = policy_bias(params, w, policy);
        if (!std::all_of(candidate.begin(), candidate.end(), [](double x) { return std::isfinite(x); })) break;
        auto improved = improve_policy(params, w, candidate, policy);
        settled = improved == policy;
        policy = std::move(improved);
      }
      if (!candidate.empty() && (settled || kAperiodicMix * bellman_span(params, w, candidate) < span)) {
        h = std::move(candidate);
      }
    }
  }
  if (span > effective_tolerance(tol, sup_abs(h))) throw MaxIterationsExceeded("relative value iteration", it, span);

  ValueFunctions out;
  out.iterations = it;
  // the transformed chain has gain mix * g and the same bias
  const double gain = 0.5 * (lo + hi) / kAperiodicMix;
  out.gain = gain;
  out.q.resize(n);
  out.j.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const int si = static_cast<int>(s);
    for (int a = 0; a < 2; ++a) {
      const Action act = action_from_index(a);
      out.q[s][static_cast<std::size_t>(a)] = stage_cost(si, act, w) + expect_next(params, h, si, act) - gain;
    }
    out.j[s] = std::min(out.q[s][0], out.q[s][1]);
  }
  return out;
}

std::vector<Action> greedy_policy(const ValueFunctions& values, double tie_tol) {
  std::vector<Action> policy;
  policy.reserve(values.q.size());
  for (const auto& q : values.q) policy.push_back(q[0] <= q[1] + tie_tol ? Action::passive : Action::active);
  return policy;
}

std::optional<int> threshold_of_policy(std::span<const Action> policy) {
  const auto first_active = std::find(policy.begin(), policy.end(), Action::active);
  const int r = static_cast<int>(first_active - policy.begin());
  if (first_active == policy.end()) return r;
  if (std::any_of(first_active + 1, policy.end(), [](Action a) { return a == Action::passive; })) return std::nullopt;
  return r;
}

namespace {

// Tie tolerance for greedy extraction scaled to the magnitude of the Q values.
double tie_tolerance(const ValueFunctions& values, double tol) {
  double scale = 1.0;
  for (const auto& q : values.q) scale = std::max({scale, std::abs(q[0]), std::abs(q[1])});
  return std::max(tol, 1e3 * std::numeric_limits<double>::epsilon() * scale);
}

bool passive_at(const PerContentParams& params, int state, double w, double tol) {
  const ValueFunctions v = relative_value_iteration(params, w, tol);
  const auto& q = v.q[static_cast<std::size_t>(state)];
  return q[0] <= q[1] + tie_tolerance(v, tol);
}

}  // namespace

std::vector<int> passive_set(const PerContentParams& params, double w, double tol) {
  const ValueFunctions v = relative_value_iteration(params, w, tol);
  const double tie = tie_tolerance(v, tol);
  std::vector<int> states;
  for (std::size_t s = 0; s < v.q.size(); ++s) {
    if (v.q[s][0] <= v.q[s][1] + tie) states.push_back(static_cast<int>(s));
  }
  return states;
}

double indifference_index_oracle(const PerContentParams& params, int state, double tol) {
  params.validate();
  check_threshold(params, state, 0);
  if (!(tol > 0.0)) throw InvalidArgument("tolerance must be > 0");
  constexpr double solver_tol = 1e-10;
  const double w_hi = 10.0 * (params.s_max + 1);
  if (passive_at(params, state, 0.0, solver_tol)) return 0.0;
  if (!passive_at(params, state, w_hi, solver_tol)) throw BracketNotFound(state, w_hi);

  double lo = 0.0;  // active
  double hi = w_hi; // passive
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (passive_at(params, state, mid, solver_tol)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

ValueFunctions threshold_q_fixed_point(const PerContentParams& params, int threshold, double w, double tol) {
  params.validate();
  check_threshold(params, threshold, 0);
  const auto n = static_cast<std::size_t>(params.num_states());
  const auto r = static_cast<std::size_t>(threshold);

  auto behaviour_value = [&](const std::vector<std::array<double, 2>>& q, std::size_t s) {
    if (s > r) return q[s][1];
    if (s < r) return q[s][0];
    return std::min(q[s][0], q[s][1]);
  };

  std::vector<std::array<double, 2>> q(n, {0.0, 0.0});
  std::vector<std::array<double, 2>> next(n);
  std::vector<double> v(n, 0.0);
  double residual = std::numeric_limits<double>::infinity();
  long it = 0;
  for (; it < kDefaultMaxIterations; ++it) {
    for (std::size_t s = 0; s < n; ++s) v[s] = behaviour_value(q, s);
    residual = 0.0;
    double scale = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const int si = static_cast<int>(s);
      for (int a = 0; a < 2; ++a) {
        const Action act = action_from_index(a);
        const double x = stage_cost(si, act, w) + params.alpha * expect_next(params, v, si, act);
        residual = std::max(residual, std::abs(x - q[s][static_cast<std::size_t>(a)]));
        scale = std::max(scale, std::abs(x));
        next[s][static_cast<std::size_t>(a)] = x;
      }
    }
    q.swap(next);
    if (residual <= effective_tolerance(tol, scale)) break;
  }
  if (it == kDefaultMaxIterations) throw MaxIterationsExceeded("threshold Q evaluation", it, residual);

  ValueFunctions out;
  out.iterations = it + 1;
  out.q = std::move(q);
  out.j.resize(n);
  for (std::size_t s = 0; s < n; ++s) out.j[s] = behaviour_value(out.q, s);
  return out;
}

double discounted_threshold_index(const PerContentParams& params, int threshold, double tol) {
  params.validate();
  check_threshold(params, threshold, 0);
  const auto r = static_cast<std::size_t>(threshold);
  const double solve_tol = std::max(1e-12, tol * 1e-3);
  auto gap = [&](double w) {
    const ValueFunctions v = threshold_q_fixed_point(params, threshold, w, solve_tol);
    return v.q[r][0] - v.q[r][1];
  };

  // gap(w) is non-increasing in w: a larger subsidy makes passivity cheaper.
  double lo = -1.0;
  double hi = 1.0;
  while (gap(lo) <= 0.0) {
    hi = lo;
    lo *= 2.0;
    if (lo < -1e12) throw BracketNotFound(threshold, lo);
  }
  while (gap(hi) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) throw BracketNotFound(threshold, hi);
  }
  while (hi - lo > tol * std::max(1.0, std::abs(hi))) {
    const double mid = 0.5 * (lo + hi);
    if (gap(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace wcache
