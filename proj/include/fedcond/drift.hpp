#pragma once

// Local drift detection over a bounded history of evaluation scores.
//
// With history s_1..s_a, mean s_bar, new score s_new and pooled mean
// s_hat = mean(s_1..s_a, s_new):
//
//   gamma = (|s_bar - s_new| - 0.5 * delta) / sqrt(s_hat * (1 - s_hat) * delta)
//   p     = 1 - Phi(gamma)
//
// Drift is declared when s_new > s_bar (scores are larger-is-worse) and
// p < significance.
//
// delta has two readings. `inverse_total` uses delta = 1 / (a + 1).
// `literal` uses delta = 1/a + 1; there the continuity correction alone is
// at least 0.5, which makes the test unable to fire for short histories
// (a <= 5 on a [0,1] score grid). It can still fire for long histories when
// s_hat is small, e.g. a = 20, s_bar = 0, s_new = 1 gives p ~ 0.015.

#include "fedcond/errors.hpp"
#include "fedcond/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numbers>
#include <optional>
#include <numeric>
#include <string>
#include <string_view>

namespace fedcond {

enum class DeltaMode { inverse_total, literal };

inline std::string_view to_string(DeltaMode m) { return m == DeltaMode::literal ? "literal" : "inverse-total"; }

/// Standard normal CDF, Phi(x) = erfc(-x / sqrt(2)) / 2.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Upper tail 1 - Phi(x), computed without cancellation.
inline double normal_upper_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// Bounded FIFO of evaluation scores for one device.
class EvalQueue {
 public:
  explicit EvalQueue(std::size_t capacity = 20, Metric metric = Metric::error_rate) : capacity_(capacity), metric_(metric) {
    if (capacity_ == 0) throw InvalidInput("EvalQueue: capacity must be positive");
  }

  void push(EvalScore score) {
    if (!std::isfinite(score.value)) throw InvalidInput("EvalQueue: non-finite score");
    if (score.metric != metric_) throw InvalidInput("EvalQueue: score metric differs from queue metric");
    if (score.value < 0.0 || score.value > metric_upper(metric_))
      throw InvalidInput("EvalQueue: score " + std::to_string(score.value) + " outside the metric range");
    scores_.push_back(score.value);
    if (scores_.size() > capacity_) scores_.pop_front();
  }

  double mean() const {
    return scores_.empty() ? 0.0 : std::accumulate(scores_.begin(), scores_.end(), 0.0) / static_cast<double>(scores_.size());
  }

  std::size_t size() const { return scores_.size(); }
  bool empty() const { return scores_.empty(); }
  std::size_t capacity() const { return capacity_; }
  Metric metric() const { return metric_; }
  const std::deque<double>& scores() const { return scores_; }

  bool operator==(const EvalQueue&) const = default;

 private:
  std::size_t capacity_;
  Metric metric_;
  std::deque<double> scores_;
};

/// Free-function form of EvalQueue::push.
inline EvalQueue push(EvalQueue queue, EvalScore score) {
  queue.push(score);
  return queue;
}

struct DetectorSettings {
  double significance = 0.05;
  DeltaMode delta_mode = DeltaMode::inverse_total;
  std::size_t warmup = 5;  // minimum history length before testing
};

struct DriftVerdict {
  bool drifted = false;
  double statistic = 0.0;
  double p_value = 1.0;
  double mean_history = 0.0;
  double pooled_mean = 0.0;
  bool tested = false;  // false during warm-up or for a degenerate pooled mean
};

inline double delta_for(DeltaMode mode, std::size_t history) {
  const auto a = static_cast<double>(history);
  return mode == DeltaMode::literal ? 1.0 / a + 1.0 : 1.0 / (a + 1.0);
}

inline DriftVerdict detect(const EvalQueue& queue, EvalScore new_score, const DetectorSettings& settings = {}) {
  if (new_score.metric != queue.metric()) throw InvalidInput("detect: score metric differs from queue metric");
  if (!std::isfinite(new_score.value)) throw InvalidInput("detect: non-finite score");
  DriftVerdict v;
  const std::size_t a = queue.size();
  v.mean_history = queue.mean();
  if (a == 0 || a < settings.warmup) {
    v.pooled_mean = a == 0 ? new_score.value : (v.mean_history * a + new_score.value) / static_cast<double>(a + 1);
    return v;
  }
  const double sum = std::accumulate(queue.scores().begin(), queue.scores().end(), 0.0) + new_score.value;
  v.pooled_mean = sum / static_cast<double>(a + 1);
  const double variance_scale = v.pooled_mean * (1.0 - v.pooled_mean);
  if (!(variance_scale > 0.0)) return v;  // pooled mean at 0 or 1 (or beyond, for smape)

  const double delta = delta_for(settings.delta_mode, a);
  v.tested = true;
  v.statistic = (std::abs(v.mean_history - new_score.value) - 0.5 * delta) / std::sqrt(variance_scale * delta);
  v.p_value = normal_upper_tail(v.statistic);
  v.drifted = new_score.value > v.mean_history && v.p_value < settings.significance;
  return v;
}

struct AdaptationPolicy {
  double lambda_initial = 0.1;
  double escalation_factor = 2.0;  // multiplier applied on detection
  double lambda_max = 1000.0;
  // Lower clamp; defaults to lambda_initial. Only a shrinking ablation
  // (escalation_factor < 1) needs it lower.
  std::optional<double> lambda_floor;
  double decay_factor = 1.0;  // applied per quiet round, pulls back toward lambda_initial

  double lambda_min() const { return lambda_floor.value_or(lambda_initial); }

  void validate() const {
    if (!(lambda_initial >= 0.0)) throw ConfigError("lambda_initial must be non-negative");
    if (!(escalation_factor > 0.0)) throw ConfigError("lambda_escalation must be positive");
    if (!(lambda_max >= lambda_initial)) throw ConfigError("lambda_max must be at least lambda_initial");
    if (!(lambda_min() >= 0.0 && lambda_min() <= lambda_initial)) throw ConfigError("lambda_floor must be in [0, lambda_initial]");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("lambda_decay must be in (0, 1]");
  }

  bool operator==(const AdaptationPolicy&) const = default;
};

inline double adapt_lambda(double current, const DriftVerdict& verdict, const AdaptationPolicy& policy) {
  const double lo = policy.lambda_min();
  if (verdict.drifted) return std::clamp(current * policy.escalation_factor, lo, policy.lambda_max);
  if (current > policy.lambda_initial) return std::max(current * policy.decay_factor, policy.lambda_initial);
  if (current < policy.lambda_initial) return std::min(current / policy.decay_factor, policy.lambda_initial);
  return current;
}

}  // namespace fedcond
