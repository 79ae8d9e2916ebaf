#include "whittle_cache/mdp.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "whittle_cache/error.hpp"

namespace wcache {

void PerContentParams::validate() const {
  std::ostringstream os;
  if (!(lambda > 0.0) || !std::isfinite(lambda)) os << "lambda must be > 0 (got " << lambda << "); ";
  if (!(nu > 0.0) || !std::isfinite(nu)) os << "nu must be > 0 (got " << nu << "); ";
  if (s_max < 1) os << "s_max must be >= 1 (got " << s_max << "); ";
  if (!(alpha > 0.0 && alpha < 1.0)) os << "alpha must lie in (0, 1) (got " << alpha << "); ";
  const std::string problems = os.str();
  if (!problems.empty()) throw InvalidArgument("invalid content parameters: " + problems.substr(0, problems.size() - 2));
}

namespace {

void check_state(const PerContentParams& params, int s) {
  if (s < 0 || s > params.s_max) {
    throw InvalidArgument("state " + std::to_string(s) + " outside [0, " + std::to_string(params.s_max) + "]");
  }
}

double death_rate(const PerContentParams& params, int s, Action a) {
  return params.nu * static_cast<double>(s) * static_cast<double>(to_index(a));
}

}  // namespace

double up_probability(const PerContentParams& params, int s, Action a) {
  check_state(params, s);
  if (s == params.s_max) return 0.0;
  return params.lambda / (params.lambda + death_rate(params, s, a));
}

double down_probability(const PerContentParams& params, int s, Action a) {
  check_state(params, s);
  const double d = death_rate(params, s, a);
  return d / (params.lambda + d);
}

double self_probability(const PerContentParams& params, int s, Action a) {
  check_state(params, s);
  if (s < params.s_max) return 0.0;
  return params.lambda / (params.lambda + death_rate(params, s, a));
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

Rng Rng::derive(std::uint64_t master_seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return Rng((static_cast<std::uint64_t>(words[0]) << 32) | words[1]);
}

double Rng::uniform() {
  // 53 high bits -> exact dyadic rational in [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::exponential(double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw InvalidArgument("exponential rate must be positive and finite");
  return -std::log1p(-uniform()) / rate;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InvalidArgument("below(0) has no valid outcome");
  // rejection sampling keeps the draw unbiased
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

Transition sample_transition(const PerContentParams& params, int s, Action a, Rng& rng, double w) {
  const double up = up_probability(params, s, a);
  const double down = down_probability(params, s, a);
  const double u = rng.uniform();
  int to = s;
  if (u < up) {
    to = s + 1;
  } else if (u < up + down) {
    to = s - 1;
  }
  return Transition{s, a, to, stage_cost(s, a, w)};
}

}  // namespace wcache
