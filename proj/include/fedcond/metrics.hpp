#pragma once

#include "fedcond/model.hpp"
#include "fedcond/records.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace fedcond {

struct MeanVariance {
  double mean = 0.0;
  double variance = 0.0;  // population
};

inline MeanVariance mean_variance(std::span<const double> xs) {
  MeanVariance mv;
  if (xs.empty()) return mv;
  // Shifted by the first value so identical inputs give exactly zero variance.
  const auto n = static_cast<double>(xs.size());
  const double shift = xs.front();
  double sum = 0.0, sq = 0.0;
  for (double x : xs) {
    sum += x - shift;
    sq += (x - shift) * (x - shift);
  }
  mv.mean = shift + sum / n;
  mv.variance = std::max(0.0, sq / n - (sum / n) * (sum / n));
  return mv;
}

struct FairnessSummary {
  // Set only with >= 5 devices.
  std::optional<double> top20_avg, top20_var, bottom20_avg, bottom20_var;
  double all_avg = 0.0;
  double all_var = 0.0;
  std::optional<double> drift_devices_var;  // unset without drift devices
  std::size_t group_size = 0;
};

/// Ranks devices by final score (lower is better) and summarizes the best
/// and worst ceil(0.2 K).
inline FairnessSummary fairness_summary(std::span<const double> final_scores, std::span<const int> drift_devices = {}) {
  FairnessSummary s;
  const MeanVariance all = mean_variance(final_scores);
  s.all_avg = all.mean;
  s.all_var = all.variance;
  if (!drift_devices.empty()) {
    std::vector<double> drifted;
    for (int d : drift_devices) drifted.push_back(final_scores[static_cast<std::size_t>(d)]);
    s.drift_devices_var = mean_variance(drifted).variance;
  }
  const std::size_t k = final_scores.size();
  if (k < 5) return s;
  std::vector<double> sorted(final_scores.begin(), final_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto group = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(k) - 1e-9));
  s.group_size = group;
  const MeanVariance top = mean_variance(std::span<const double>(sorted).first(group));
  const MeanVariance bottom = mean_variance(std::span<const double>(sorted).last(group));
  s.top20_avg = top.mean;
  s.top20_var = top.variance;
  s.bottom20_avg = bottom.mean;
  s.bottom20_var = bottom.variance;
  return s;
}

inline FairnessSummary fairness_summary(const std::vector<RoundRecord>& records, std::span<const int> drift_devices = {}) {
  if (records.empty()) return {};
  return fairness_summary(std::span<const double>(records.back().device_scores), drift_devices);
}

struct ByteCounts {
  std::uint64_t uplink = 0;
  std::uint64_t downlink = 0;
  std::size_t record_index = 0;
  bool operator==(const ByteCounts&) const = default;
};

/// Byte counters at the first record whose mean score is at least as good
/// as (<=) the target; nullopt if never reached.
inline std::optional<ByteCounts> bytes_to_target(const std::vector<RoundRecord>& records, double target_score) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].mean_score <= target_score) return ByteCounts{records[i].uplink_bytes, records[i].downlink_bytes, i};
  }
  return std::nullopt;
}

/// Metric value in its reporting orientation (accuracy, F1, SMAPE).
inline double natural_value(Metric m, double stored) { return m == Metric::smape ? stored : 1.0 - stored; }

inline std::string_view natural_name(Metric m) {
  switch (m) {
    case Metric::error_rate: return "accuracy";
    case Metric::one_minus_f1: return "f1";
    case Metric::smape: return "smape";
  }
  return "?";
}

}  // namespace fedcond
