#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include <nlohmann/json.hpp>

namespace botverse {

// xoshiro256** stream with portable transforms. Every random draw in the
// simulator goes through one of these so a run is bit-reproducible and the
// full generator state fits in four words.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  // Independent stream for a named consumer (agent id, "env", "ingest", ...).
  static Rng derive(std::uint64_t master_seed, std::string_view label);

  std::uint64_t next();
  double uniform();                        // [0, 1)
  double uniform_open();                   // (0, 1)
  std::uint64_t below(std::uint64_t n);    // [0, n), unbiased
  bool bernoulli(double p);
  double exponential(double rate);
  double normal();
  double lognormal(double mu, double sigma);

  const State& state() const noexcept { return state_; }
  void set_state(const State& s) noexcept { state_ = s; }

  bool operator==(const Rng&) const = default;

 private:
  State state_{};
};

std::uint64_t fnv1a64(std::string_view text);
std::uint64_t splitmix64(std::uint64_t& x);

void to_json(nlohmann::json& j, const Rng& rng);
void from_json(const nlohmann::json& j, Rng& rng);

}  // namespace botverse
