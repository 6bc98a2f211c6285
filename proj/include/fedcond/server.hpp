#pragma once

// Server side: per-update aggregation, the update-count ledger, the
// fewest-updates dispatcher with its concurrency cap, and byte counters.

#include "fedcond/client.hpp"
#include "fedcond/errors.hpp"
#include "fedcond/log.hpp"
#include "fedcond/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedcond {

/// Bytes for one model transfer: parameter count times scalar width.
inline std::size_t model_bytes(const ModelSpec& spec, std::size_t scalar_bytes = 4) { return spec.parameter_count() * scalar_bytes; }

/// ceil(gamma * K), at least one slot.
inline std::size_t concurrency_cap(double gamma, std::size_t num_devices) {
  const double raw = std::ceil(gamma * static_cast<double>(num_devices) - 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(raw));
}

struct ServerSettings {
  double gamma = 0.2;
  std::size_t model_bytes = 0;
  // An idle device is eligible for dispatch only while its ledger count is
  // at most min(ledger) + max_update_lead. Negative disables the bound.
  int max_update_lead = 1;
  std::optional<std::size_t> fixed_total_samples;  // unset: N = sum of latest reported n_k
  double staleness_exponent = 0.0;                 // weight *= (1 + staleness)^-exponent
};

struct ServerState {
  ParamVector global_model;
  std::vector<std::size_t> ledger;
  std::vector<std::uint8_t> active;
  std::vector<std::uint8_t> retired;  // streams exhausted; never selected again
  std::size_t active_count = 0;
  std::vector<std::size_t> reported_samples;
  std::size_t total_samples = 0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::size_t round_counter = 0;
  std::size_t dispatches = 0;
  ServerSettings settings;

  std::size_t num_devices() const { return ledger.size(); }
  std::size_t capacity() const { return concurrency_cap(settings.gamma, num_devices()); }
  bool is_active(int device) const { return active[static_cast<std::size_t>(device)] != 0; }
  std::size_t ledger_spread() const {
    if (ledger.empty()) return 0;
    const auto [lo, hi] = std::minmax_element(ledger.begin(), ledger.end());
    return *hi - *lo;
  }
};

inline ServerState make_server(const ParamVector& initial_model, std::size_t num_devices, const ServerSettings& settings) {
  if (num_devices == 0) throw ConfigError("server: need at least one device");
  if (!(settings.gamma > 0.0 && settings.gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
  ServerState s;
  s.global_model = initial_model;
  s.ledger.assign(num_devices, 0);
  s.active.assign(num_devices, 0);
  s.retired.assign(num_devices, 0);
  s.reported_samples.assign(num_devices, 0);
  s.settings = settings;
  return s;
}

struct AggregationResult {
  ParamVector new_global;
  double applied_weight = 0.0;
  int source_device = 0;
};

/// Applies w <- w - (n_k / N) * (base - trained) for one arriving update.
/// A non-finite update is rejected and leaves the state untouched.
inline std::optional<AggregationResult> aggregate(ServerState& state, const LocalUpdate& update) {
  const auto k = static_cast<std::size_t>(update.device_id);
  if (update.device_id < 0 || k >= state.num_devices()) throw ProtocolError("aggregate: unknown device " + std::to_string(update.device_id));
  if (update.trained_model.size() != state.global_model.size() || update.base_model.size() != state.global_model.size())
    throw ProtocolError("aggregate: update from device " + std::to_string(update.device_id) + " has the wrong dimension");
  if (update.sample_count == 0) throw ProtocolError("aggregate: update from device " + std::to_string(update.device_id) + " reports no samples");
  if (!update.trained_model.allFinite() || !update.base_model.allFinite()) {
    log::warning("aggregate: rejected non-finite update from device " + std::to_string(update.device_id));
    return std::nullopt;
  }

  state.reported_samples[k] = update.sample_count;
  if (state.settings.fixed_total_samples) {
    state.total_samples = *state.settings.fixed_total_samples;
  } else {
    state.total_samples = std::accumulate(state.reported_samples.begin(), state.reported_samples.end(), std::size_t{0});
  }
  double weight = std::min(1.0, static_cast<double>(update.sample_count) / static_cast<double>(state.total_samples));
  if (state.settings.staleness_exponent != 0.0) {
    const auto staleness = static_cast<double>(state.round_counter - std::min(update.base_version, state.round_counter));
    weight *= std::pow(1.0 + staleness, -state.settings.staleness_exponent);
  }

  AggregationResult result;
  result.new_global = state.global_model - weight * (update.base_model - update.trained_model);
  result.applied_weight = weight;
  result.source_device = update.device_id;

  state.global_model = result.new_global;
  ++state.ledger[k];
  ++state.round_counter;
  state.uplink_bytes += state.settings.model_bytes;
  return result;
}

/// Frees the device's training slot.
inline void release(ServerState& state, int device) {
  auto& flag = state.active[static_cast<std::size_t>(device)];
  if (flag) {
    flag = 0;
    --state.active_count;
  }
}

inline void mark_dispatched(ServerState& state, int device) {
  auto& flag = state.active[static_cast<std::size_t>(device)];
  if (!flag) {
    flag = 1;
    ++state.active_count;
  }
  state.downlink_bytes += state.settings.model_bytes;
  ++state.dispatches;
}

/// Fewest-updates selection among idle devices (ties: lowest id). The lead
/// bound is measured against the smallest count among non-retired devices.
/// Returns
/// nullopt when the cap is reached or no idle device is eligible. The
/// selected device is marked active and the transfer is counted.
inline std::optional<int> select_next_device(ServerState& state, std::span<const int> idle_devices) {
  if (state.active_count >= state.capacity() || idle_devices.empty()) return std::nullopt;
  std::size_t floor_count = std::numeric_limits<std::size_t>::max();
  for (std::size_t d = 0; d < state.num_devices(); ++d)
    if (!state.retired[d]) floor_count = std::min(floor_count, state.ledger[d]);
  std::optional<int> best;
  for (int d : idle_devices) {
    const std::size_t c = state.ledger[static_cast<std::size_t>(d)];
    if (state.is_active(d) || state.retired[static_cast<std::size_t>(d)]) continue;
    if (state.settings.max_update_lead >= 0 && c > floor_count + static_cast<std::size_t>(state.settings.max_update_lead)) continue;
    if (!best || c < state.ledger[static_cast<std::size_t>(*best)] || (c == state.ledger[static_cast<std::size_t>(*best)] && d < *best))
      best = d;
  }
  if (best) mark_dispatched(state, *best);
  return best;
}

/// Initial dispatch of ceil(gamma * K) devices; with an all-zero ledger these
/// are the lowest ids.
inline std::vector<int> init_dispatch(ServerState& state, std::span<const int> all_devices) {
  if (!(state.settings.gamma > 0.0 && state.settings.gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
  std::vector<int> chosen;
  while (auto d = select_next_device(state, all_devices)) chosen.push_back(*d);
  return chosen;
}

/// Sends the global model to every device (broadcast baseline).
inline void broadcast(ServerState& state) {
  state.downlink_bytes += static_cast<std::uint64_t>(state.num_devices()) * state.settings.model_bytes;
  state.dispatches += state.num_devices();
}

}  // namespace fedcond
