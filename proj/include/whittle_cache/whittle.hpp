#pragma once

// Exact index machinery for the per-content MDP: closed-form stationary
// distributions of threshold policies, the closed-form Whittle index, and the
// dynamic-programming oracles used to certify structure and cross-check it.
//
// Threshold convention: policy R is passive on states 0..R and active on
// R+1..s_max. R = -1 is the always-active policy. All distributions here are
// decision-epoch (embedded chain) proportions, not time averages.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "whittle_cache/mdp.hpp"

namespace wcache {

struct StationaryDist {
  int threshold = 0;
  std::vector<double> probs;
};

struct WhittleTable {
  PerContentParams params;
  std::vector<double> indices;  ///< W(R) for R = 0..s_max
  bool indexable = false;       ///< indices non-decreasing in R (ties within 1e-9)
};

struct ValueFunctions {
  std::vector<double> j;                  ///< J(s) = min_a Q(s, a); the bias for average-cost solves
  std::vector<std::array<double, 2>> q;   ///< Q(s, a)
  std::optional<double> gain;             ///< average cost per epoch, average-cost solves only
  long iterations = 0;
};

inline constexpr long kDefaultMaxIterations = 1'000'000;

StationaryDist stationary_distribution(const PerContentParams& params, int threshold);

/// Ratio of mean-queue-length difference to passive-probability difference
/// between thresholds R and R-1. Throws DegenerateDenominator below 1e-12.
double whittle_index_closed_form(const PerContentParams& params, int threshold);

WhittleTable whittle_table(const PerContentParams& params);

/// Discounted Bellman fixed point for the multiplier w, to sup-norm residual
/// <= tol. `initial` seeds the iteration (zeros when empty).
ValueFunctions discounted_value_iteration(const PerContentParams& params, double w, double tol,
                                          long max_iterations = kDefaultMaxIterations,
                                          std::span<const double> initial = {});

/// Average-cost relative value iteration with reference state 0. The kernel is
/// made aperiodic with a 1/2 self-loop mix, which leaves gain and bias unchanged.
ValueFunctions relative_value_iteration(const PerContentParams& params, double w, double tol,
                                        long max_iterations = kDefaultMaxIterations);

/// Minimising action per state; |Q(s,0) - Q(s,1)| <= tie_tol resolves to passive.
std::vector<Action> greedy_policy(const ValueFunctions& values, double tie_tol = 0.0);

/// R = number of leading passive states when the policy is passive before R
/// and active after it; the action at R itself is unconstrained. nullopt when
/// the pattern is not of threshold type.
std::optional<int> threshold_of_policy(std::span<const Action> policy);

/// States where the average-cost greedy action is passive.
std::vector<int> passive_set(const PerContentParams& params, double w, double tol = 1e-9);

/// Smallest multiplier at which `state` turns passive under the average-cost
/// greedy policy, located by bisection over [0, 10*(s_max+1)] to width tol.
/// Returns 0 when the state is already passive at w = 0; throws
/// BracketNotFound when it is still active at the upper end.
double indifference_index_oracle(const PerContentParams& params, int state, double tol = 1e-6);

/// Discounted Q fixed point under the threshold-R behaviour used by the
/// learners: Q(s,0) evaluated for s < R, Q(s,1) for s > R, both at R, with
/// bootstrap Q(s',1), Q(s',0) or min_a Q(s',a) by the side of R that s' is on.
/// Entries off the behaviour support are the one-step lookahead values.
ValueFunctions threshold_q_fixed_point(const PerContentParams& params, int threshold, double w, double tol = 1e-10);

/// Multiplier where the threshold-R fixed point is indifferent at R, i.e. the
/// equilibrium of the two-timescale learner for that threshold.
double discounted_threshold_index(const PerContentParams& params, int threshold, double tol = 1e-9);

}  // namespace wcache
