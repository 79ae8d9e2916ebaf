#pragma once

// Per-content controlled birth-death MDP observed at its decision epochs.
//
// From state s under action a the next epoch moves up with probability
// lambda / (lambda + nu*s*a) and down with the complementary mass. At the
// state cap an arrival is dropped, so the up mass becomes a self-loop.

#include <cstdint>
#include <random>

namespace wcache {

enum class Action : std::uint8_t { passive = 0, active = 1 };

constexpr int to_index(Action a) noexcept { return static_cast<int>(a); }
constexpr Action action_from_index(int a) noexcept { return a == 0 ? Action::passive : Action::active; }

struct PerContentParams {
  double lambda = 1.0;  ///< request arrival rate
  double nu = 1.0;      ///< unit delivery rate, the true delivery rate is nu*s*a
  int s_max = 1;        ///< queue cap
  double alpha = 0.98;  ///< discount factor for the discounted variants

  /// Throws InvalidArgument unless lambda > 0, nu > 0, s_max >= 1, 0 < alpha < 1.
  void validate() const;
  int num_states() const noexcept { return s_max + 1; }
};

struct Transition {
  int from = 0;
  Action action = Action::passive;
  int to = 0;
  double stage_cost = 0.0;
};

double up_probability(const PerContentParams& params, int s, Action a);
double down_probability(const PerContentParams& params, int s, Action a);
double self_probability(const PerContentParams& params, int s, Action a);

/// s - w * (1 - a): queue-length cost with the passivity subsidy w.
constexpr double stage_cost(int s, Action a, double w) noexcept {
  return static_cast<double>(s) - w * (1.0 - static_cast<double>(to_index(a)));
}

/// Seeded random stream. Draws are reproducible across platforms because only
/// the raw 64-bit engine output is consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent stream for `stream` (e.g. a content id) under a master seed.
  static Rng derive(std::uint64_t master_seed, std::uint64_t stream);

  std::uint64_t next() { return engine_(); }
  double uniform();  ///< in [0, 1)
  bool coin() { return uniform() < 0.5; }
  double exponential(double rate);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

/// Draws the next embedded-chain state. Consumes exactly one uniform.
Transition sample_transition(const PerContentParams& params, int s, Action a, Rng& rng, double w = 0.0);

}  // namespace wcache
