#pragma once

#include "fedcond/config.hpp"
#include "fedcond/errors.hpp"

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fedcond {

/// A drift verdict that fired on a device since the previous record.
struct DriftFlag {
  int device_id = 0;
  std::size_t round = 0;
  double statistic = 0.0;
  double p_value = 1.0;
  bool drifted = true;

  bool operator==(const DriftFlag&) const = default;
};

/// One line of run output: one per aggregation (async) or global round (sync).
struct RoundRecord {
  double simulated_time = 0.0;
  std::size_t event_index = 0;
  AlgorithmMode mode = AlgorithmMode::fedcond;
  std::optional<int> device_id;  // source of the aggregated update (async modes)
  std::vector<double> device_scores;
  double mean_score = 0.0;
  double variance = 0.0;
  std::vector<DriftFlag> drift_flags;
  std::vector<std::size_t> ledger;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::vector<double> lambdas;

  bool operator==(const RoundRecord&) const = default;
};

inline AlgorithmMode parse_mode(std::string_view s) {
  for (AlgorithmMode m : kAllModes)
    if (to_string(m) == s) return m;
  throw InvalidInput("unknown mode '" + std::string(s) + "'");
}

using ordered_json = nlohmann::ordered_json;

inline void to_json(ordered_json& j, const DriftFlag& f) {
  j = ordered_json{{"device_id", f.device_id}, {"round", f.round}, {"statistic", f.statistic}, {"p_value", f.p_value}, {"drifted", f.drifted}};
}

inline void from_json(const ordered_json& j, DriftFlag& f) {
  j.at("device_id").get_to(f.device_id);
  j.at("round").get_to(f.round);
  j.at("statistic").get_to(f.statistic);
  j.at("p_value").get_to(f.p_value);
  j.at("drifted").get_to(f.drifted);
}

inline void to_json(ordered_json& j, const RoundRecord& r) {
  j = ordered_json::object();
  j["simulated_time"] = r.simulated_time;
  j["event_index"] = r.event_index;
  j["mode"] = std::string(to_string(r.mode));
  j["device_id"] = r.device_id ? ordered_json(*r.device_id) : ordered_json(nullptr);
  j["device_scores"] = r.device_scores;
  j["mean_score"] = r.mean_score;
  j["variance"] = r.variance;
  j["drift_flags"] = r.drift_flags;
  j["ledger"] = r.ledger;
  j["uplink_bytes"] = r.uplink_bytes;
  j["downlink_bytes"] = r.downlink_bytes;
  j["lambdas"] = r.lambdas;
}

inline void from_json(const ordered_json& j, RoundRecord& r) {
  j.at("simulated_time").get_to(r.simulated_time);
  j.at("event_index").get_to(r.event_index);
  r.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.at("device_id").is_null()) {
    r.device_id.reset();
  } else {
    r.device_id = j.at("device_id").get<int>();
  }
  j.at("device_scores").get_to(r.device_scores);
  j.at("mean_score").get_to(r.mean_score);
  j.at("variance").get_to(r.variance);
  j.at("drift_flags").get_to(r.drift_flags);
  j.at("ledger").get_to(r.ledger);
  j.at("uplink_bytes").get_to(r.uplink_bytes);
  j.at("downlink_bytes").get_to(r.downlink_bytes);
  j.at("lambdas").get_to(r.lambdas);
}

}  // namespace fedcond
