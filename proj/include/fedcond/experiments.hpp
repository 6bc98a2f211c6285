#pragma once

// Multi-run drivers behind the CLI: mode comparison, parameter sweeps and
// the detector calibration study.

#include "fedcond/config.hpp"
#include "fedcond/drift.hpp"
#include "fedcond/rng.hpp"
#include "fedcond/simulation.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fedcond {

/// All four modes on one scenario with shared seeds.
inline std::vector<RunResult> run_compare(const RunConfig& cfg) {
  std::vector<RunResult> out;
  for (AlgorithmMode m : kAllModes) {
    RunConfig c = cfg;
    c.mode = m;
    out.push_back(run(c));
  }
  return out;
}

struct SweepPoint {
  std::string key;
  std::string value;
  RunConfig config;
  RunResult result;
};

inline std::vector<SweepPoint> run_sweep(const RunConfig& base, const std::string& key, const std::vector<std::string>& values) {
  std::vector<SweepPoint> out;
  for (const auto& v : values) {
    RunConfig c = base;
    apply_setting(c, key, v, "sweep " + key);
    validate(c);
    out.push_back({key, v, c, run(c)});
  }
  return out;
}

/// Error rate of `trials` Bernoulli(p) outcomes.
inline double binomial_rate(Rng& rng, double p, std::size_t trials) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < trials; ++i) hits += rng.bernoulli(p) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(trials);
}

struct FalsePositiveStudy {
  std::size_t tests = 0;  // evaluations past warm-up
  std::size_t fires = 0;
  double rate() const { return tests == 0 ? 0.0 : static_cast<double>(fires) / static_cast<double>(tests); }
};

/// Feeds `evaluations` stationary error rates (each over `batch` Bernoulli(mean)
/// predictions) through one detector and counts firings.
inline FalsePositiveStudy false_positive_study(std::size_t evaluations, double mean, std::size_t batch, std::size_t capacity,
                                               const DetectorSettings& settings, std::uint64_t seed) {
  Rng rng(seed, {0xCA11B});
  EvalQueue queue(capacity);
  FalsePositiveStudy s;
  for (std::size_t i = 0; i < evaluations; ++i) {
    const EvalScore score{binomial_rate(rng, mean, batch), Metric::error_rate};
    const DriftVerdict v = detect(queue, score, settings);
    if (v.tested) {
      ++s.tests;
      if (v.drifted) ++s.fires;
    }
    queue.push(score);
  }
  return s;
}

struct PowerStudy {
  std::size_t trials = 0;
  std::size_t detected = 0;
  double rate() const { return trials == 0 ? 0.0 : static_cast<double>(detected) / static_cast<double>(trials); }
};

/// Per trial: fill a queue with `capacity` scores at `before`, then switch to
/// `after`; counts trials that fire within `within` evaluations.
inline PowerStudy power_study(std::size_t trials, double before, double after, std::size_t batch, std::size_t capacity,
                              std::size_t within, const DetectorSettings& settings, std::uint64_t seed) {
  PowerStudy s;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(seed, {0x9043, t});
    EvalQueue queue(capacity);
    for (std::size_t i = 0; i < capacity; ++i) queue.push({binomial_rate(rng, before, batch), Metric::error_rate});
    bool fired = false;
    for (std::size_t i = 0; i < within && !fired; ++i) {
      const EvalScore score{binomial_rate(rng, after, batch), Metric::error_rate};
      fired = detect(queue, score, settings).drifted;
      queue.push(score);
    }
    ++s.trials;
    if (fired) ++s.detected;
  }
  return s;
}

}  // namespace fedcond
