#pragma once

#include "fedcond/errors.hpp"
#include "fedcond/rng.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace fedcond {

/// Lognormal delays: median * exp(sigma * Z). One median per device for
/// compute time; links share a median per direction.
struct LatencyProfile {
  std::vector<double> compute_median;
  double compute_sigma = 0.2;
  double uplink_median = 0.1;
  double downlink_median = 0.1;
  double network_sigma = 0.2;
  std::uint64_t seed = 1;

  void validate() const {
    for (double m : compute_median)
      if (!(m > 0.0)) throw ConfigError("latency: compute medians must be positive");
    if (!(uplink_median > 0.0) || !(downlink_median > 0.0)) throw ConfigError("latency: link medians must be positive");
    if (!(compute_sigma >= 0.0) || !(network_sigma >= 0.0)) throw ConfigError("latency: sigmas must be non-negative");
  }
};

struct LatencySample {
  double compute = 0.0;
  double uplink = 0.0;
  double downlink = 0.0;

  double total() const { return compute + uplink + downlink; }
  bool operator==(const LatencySample&) const = default;
};

/// Deterministic per (profile.seed, device, round).
inline LatencySample sample_latency(const LatencyProfile& profile, int device, std::size_t round) {
  Rng rng(profile.seed, {tag(Channel::latency), static_cast<std::uint64_t>(device), round});
  const double z_compute = rng.normal();
  const double z_up = rng.normal();
  const double z_down = rng.normal();
  LatencySample s;
  s.compute = profile.compute_median.at(static_cast<std::size_t>(device)) * std::exp(profile.compute_sigma * z_compute);
  s.uplink = profile.uplink_median * std::exp(profile.network_sigma * z_up);
  s.downlink = profile.downlink_median * std::exp(profile.network_sigma * z_down);
  return s;
}

}  // namespace fedcond
