#pragma once

// Seeded randomness for the simulator.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The std:: distributions are implementation-defined, so the
// conversions to uniform / normal / lognormal draws are done here:
//   uniform  = top 53 bits of one engine word * 2^-53        -> [0, 1)
//   normal   = Box-Muller, cosine branch, u1 taken as 1 - uniform
//   index(n) = rejection sampling on the engine word
// Independent sub-streams are keyed by mixing a seed with integer tags
// through the splitmix64 finalizer.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace fedcond {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Deterministic sub-seed for (seed, tag0, tag1, ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t + 0x632BE59BD9B4E019ULL));
  return h;
}

/// Stream tags, so unrelated consumers of one seed never share a sub-stream.
enum class Channel : std::uint64_t {
  train = 1,
  corrupt = 2,
  mixture = 3,
  test = 4,
  concept_basis = 5,
  latency = 6,
  drift_assign = 7,
  participation = 8,
  init = 9,
  heterogeneity = 10,
};

constexpr std::uint64_t tag(Channel c) noexcept { return static_cast<std::uint64_t>(c); }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) : engine_(derive_seed(seed, tags)) {}

  std::uint64_t next() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fedcond
