#pragma once

// Per-device data streams. A batch is a pure function of
// (StreamSpec, DriftPlan, round_index).

#include "fedcond/batch.hpp"
#include "fedcond/errors.hpp"
#include "fedcond/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedcond {

enum class StreamSource { rotating_hyperplane, gaussian_clusters, csv_file };

inline std::string_view to_string(StreamSource s) {
  switch (s) {
    case StreamSource::rotating_hyperplane: return "rotating-hyperplane";
    case StreamSource::gaussian_clusters: return "gaussian-clusters";
    case StreamSource::csv_file: return "csv-file";
  }
  return "?";
}

/// Rows for one device read from a CSV file, already split 60/20/20 in file order.
struct CsvDeviceData {
  int device_id = 0;
  FeatureMatrix train_x, validation_x, test_x;
  Eigen::VectorXd train_y, validation_y, test_y;
};

struct StreamSpec {
  StreamSource source = StreamSource::rotating_hyperplane;
  int input_dim = 10;
  int num_classes = 2;
  std::size_t samples_per_round = 20;
  std::size_t total_rounds = 100;
  std::uint64_t seed = 1;          // per-device sample stream
  std::uint64_t concept_seed = 1;  // shared by devices that learn the same concept
  // Fractional growth of the per-round sample count; 0 = constant arrival.
  double growth_per_round = 0.0;
  double rotation_rate = 0.0;               // radians per round (hyperplane)
  double concept_shift_angle = std::numbers::pi / 2;  // new concept for gradual drift (hyperplane)
  double cluster_separation = 2.0;          // gaussian clusters
  double label_noise = 0.0;                 // probability of flipping to a random other class
  std::shared_ptr<const CsvDeviceData> csv;

  std::size_t samples_at(std::size_t round) const {
    if (growth_per_round == 0.0) return samples_per_round;
    const double n = static_cast<double>(samples_per_round) * std::pow(1.0 + growth_per_round, static_cast<double>(round));
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n)));
  }
};

enum class DriftKind { none, sudden, gradual };

inline std::string_view to_string(DriftKind k) {
  switch (k) {
    case DriftKind::none: return "none";
    case DriftKind::sudden: return "sudden";
    case DriftKind::gradual: return "gradual";
  }
  return "?";
}

struct DriftPlan {
  DriftKind kind = DriftKind::none;
  double start_fraction = 0.4;
  // Gradual: length of the mixing transition. Sudden: length of the
  // corrupted stretch, unset = until the end of the stream.
  std::optional<std::size_t> duration_rounds;
  double corrupt_low = 10.0;
  double corrupt_high = 1000.0;

  std::size_t first_round(std::size_t total_rounds) const {
    return static_cast<std::size_t>(std::floor(start_fraction * static_cast<double>(total_rounds)));
  }

  void validate() const {
    if (!(start_fraction >= 0.0 && start_fraction <= 1.0)) throw ConfigError("drift: start_fraction must be in [0, 1]");
    if (duration_rounds && *duration_rounds == 0) throw ConfigError("drift: duration_rounds must be positive");
    if (kind == DriftKind::gradual && !duration_rounds) throw ConfigError("drift: gradual drift needs duration_rounds");
    if (!(corrupt_low <= corrupt_high)) throw ConfigError("drift: corrupt_low must not exceed corrupt_high");
  }
};

/// Probability that a row at `round` still comes from the old concept.
/// Falls linearly from 1 at the drift start to 0 after duration_rounds.
inline double old_concept_probability(const DriftPlan& plan, std::size_t total_rounds, std::size_t round) {
  if (plan.kind != DriftKind::gradual) return 1.0;
  const std::size_t start = plan.first_round(total_rounds);
  if (round < start) return 1.0;
  const double t = static_cast<double>(round - start) / static_cast<double>(*plan.duration_rounds);
  return std::clamp(1.0 - t, 0.0, 1.0);
}

inline bool sudden_corruption_active(const DriftPlan& plan, std::size_t total_rounds, std::size_t round) {
  if (plan.kind != DriftKind::sudden) return false;
  const std::size_t start = plan.first_round(total_rounds);
  if (round < start) return false;
  return !plan.duration_rounds || round < start + *plan.duration_rounds;
}

/// True once the stream has entered its drift (either kind).
inline bool drift_started(const DriftPlan& plan, std::size_t total_rounds, std::size_t round) {
  return plan.kind != DriftKind::none && round >= plan.first_round(total_rounds);
}

namespace detail {

// Two orthonormal directions drawn from the concept seed.
struct HyperplaneBasis {
  Eigen::VectorXd a, b;
};

inline HyperplaneBasis hyperplane_basis(const StreamSpec& spec) {
  if (spec.input_dim < 2) throw ConfigError("stream: rotating-hyperplane needs input_dim >= 2");
  Rng rng(spec.concept_seed, {tag(Channel::concept_basis)});
  Eigen::VectorXd a(spec.input_dim), b(spec.input_dim);
  for (int i = 0; i < spec.input_dim; ++i) a[i] = rng.normal();
  for (int i = 0; i < spec.input_dim; ++i) b[i] = rng.normal();
  a.normalize();
  b -= a.dot(b) * a;
  b.normalize();
  return {a, b};
}

inline Eigen::VectorXd hyperplane_normal(const HyperplaneBasis& basis, double angle) {
  return std::cos(angle) * basis.a + std::sin(angle) * basis.b;
}

inline FeatureMatrix cluster_means(const StreamSpec& spec) {
  Rng rng(spec.concept_seed, {tag(Channel::concept_basis)});
  FeatureMatrix means(spec.num_classes, spec.input_dim);
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int j = 0; j < spec.input_dim; ++j) means(c, j) = rng.normal();
    means.row(c) *= spec.cluster_separation / std::max(means.row(c).norm(), 1e-12);
  }
  return means;
}

inline double flip_label(double label, int classes, Rng& rng) {
  const auto shift = 1 + rng.index(static_cast<std::uint64_t>(classes - 1));
  return static_cast<double>((static_cast<std::uint64_t>(label) + shift) % static_cast<std::uint64_t>(classes));
}

// Draws rows from the synthetic concept at `round`. Row i comes from the
// post-drift concept when use_new[i] is set. Uses `rng` for features,
// labels and label noise, in that order per row.
inline StreamBatch synthesize(const StreamSpec& spec, std::size_t round, std::size_t n, const std::vector<std::uint8_t>& use_new,
                              Rng& rng) {
  StreamBatch out;
  out.round_index = round;
  out.features.resize(static_cast<Eigen::Index>(n), spec.input_dim);
  out.labels.resize(static_cast<Eigen::Index>(n));
  out.from_new_concept = use_new;

  if (spec.source == StreamSource::rotating_hyperplane) {
    const HyperplaneBasis basis = hyperplane_basis(spec);
    const double angle = spec.rotation_rate * static_cast<double>(round);
    const Eigen::VectorXd old_normal = hyperplane_normal(basis, angle);
    const Eigen::VectorXd new_normal = hyperplane_normal(basis, angle + spec.concept_shift_angle);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      for (int j = 0; j < spec.input_dim; ++j) out.features(r, j) = rng.uniform(-1.0, 1.0);
      const Eigen::VectorXd& normal = use_new[i] ? new_normal : old_normal;
      double label = out.features.row(r).dot(normal.transpose()) > 0.0 ? 1.0 : 0.0;
      if (rng.bernoulli(spec.label_noise)) label = flip_label(label, 2, rng);
      out.labels[r] = label;
    }
  } else {
    const FeatureMatrix means = cluster_means(spec);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto c = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(spec.num_classes)));
      // New concept: class c sits where class c+1 used to be.
      const Eigen::Index mean_row = use_new[i] ? (c + 1) % spec.num_classes : c;
      for (int j = 0; j < spec.input_dim; ++j) out.features(r, j) = means(mean_row, j) + rng.normal();
      double label = static_cast<double>(c);
      if (rng.bernoulli(spec.label_noise)) label = flip_label(label, spec.num_classes, rng);
      out.labels[r] = label;
    }
  }
  return out;
}

inline std::vector<std::uint8_t> concept_mask(const DriftPlan& plan, const StreamSpec& spec, std::size_t round, std::size_t n,
                                              Rng& rng) {
  const double p_old = old_concept_probability(plan, spec.total_rounds, round);
  std::vector<std::uint8_t> mask(n, 0);
  if (plan.kind != DriftKind::gradual) return mask;
  for (auto& m : mask) m = rng.uniform() >= p_old ? 1 : 0;
  return mask;
}

inline void check_round(const StreamSpec& spec, std::size_t round) {
  if (round >= spec.total_rounds)
    throw InvalidInput("stream: round " + std::to_string(round) + " out of range (total_rounds = " +
                       std::to_string(spec.total_rounds) + ")");
}

inline StreamBatch csv_round(const StreamSpec& spec, std::size_t round) {
  const CsvDeviceData& d = *spec.csv;
  const auto start = static_cast<Eigen::Index>(round * spec.samples_per_round);
  const Eigen::Index count = std::min<Eigen::Index>(static_cast<Eigen::Index>(spec.samples_per_round), d.train_x.rows() - start);
  StreamBatch out;
  out.round_index = round;
  out.features = d.train_x.middleRows(start, count);
  out.labels = d.train_y.segment(start, count);
  out.from_new_concept.assign(static_cast<std::size_t>(count), 0);
  return out;
}

}  // namespace detail

/// Binary rotating-hyperplane concept: x ~ U[-1,1]^d, label 1 iff a(r).x > 0
/// with a(r) = cos(rate * r) a0 + sin(rate * r) b0.
inline StreamBatch rotating_hyperplane(std::size_t round, const StreamSpec& spec) {
  if (spec.source != StreamSource::rotating_hyperplane) throw InvalidInput("rotating_hyperplane: wrong stream source");
  detail::check_round(spec, round);
  Rng rng(spec.seed, {tag(Channel::train), round});
  const std::size_t n = spec.samples_at(round);
  return detail::synthesize(spec, round, n, std::vector<std::uint8_t>(n, 0), rng);
}

/// The round's training batch, with the drift plan applied.
inline StreamBatch next_batch(const StreamSpec& spec, const DriftPlan& plan, std::size_t round) {
  detail::check_round(spec, round);
  StreamBatch batch;
  if (spec.source == StreamSource::csv_file) {
    if (!spec.csv) throw ConfigError("stream: csv-file source without loaded data");
    if (plan.kind == DriftKind::gradual) throw ConfigError("stream: gradual drift needs a synthetic source");
    batch = detail::csv_round(spec, round);
  } else {
    const std::size_t n = spec.samples_at(round);
    Rng mix(spec.seed, {tag(Channel::mixture), round});
    const auto mask = detail::concept_mask(plan, spec, round, n, mix);
    Rng rng(spec.seed, {tag(Channel::train), round});
    batch = detail::synthesize(spec, round, n, mask, rng);
  }
  if (sudden_corruption_active(plan, spec.total_rounds, round)) {
    // Feature corruption only; labels stay as generated.
    Rng corrupt(spec.seed, {tag(Channel::corrupt), round});
    for (Eigen::Index i = 0; i < batch.features.rows(); ++i)
      for (Eigen::Index j = 0; j < batch.features.cols(); ++j)
        batch.features(i, j) = corrupt.uniform(plan.corrupt_low, plan.corrupt_high);
  }
  return batch;
}

/// Held-out evaluation rows for a device whose stream is at `round`. The
/// feature draws are fixed across rounds; labels follow the concept active at
/// `round` (gradual mixing applies, sensor corruption does not). CSV streams
/// return their fixed test split.
inline StreamBatch test_batch(const StreamSpec& spec, const DriftPlan& plan, std::size_t round, std::size_t n) {
  if (spec.source == StreamSource::csv_file) {
    if (!spec.csv) throw ConfigError("stream: csv-file source without loaded data");
    StreamBatch out;
    out.round_index = round;
    out.features = spec.csv->test_x;
    out.labels = spec.csv->test_y;
    out.from_new_concept.assign(static_cast<std::size_t>(out.labels.size()), 0);
    return out;
  }
  Rng mix(spec.seed, {tag(Channel::test), 1});
  const double p_old = old_concept_probability(plan, spec.total_rounds, round);
  std::vector<std::uint8_t> mask(n, 0);
  for (auto& m : mask) m = (plan.kind == DriftKind::gradual && mix.uniform() >= p_old) ? 1 : 0;
  Rng rng(spec.seed, {tag(Channel::test), 0});
  return detail::synthesize(spec, round, n, mask, rng);
}

/// round(C * K) distinct device ids, uniformly without replacement, sorted.
inline std::vector<int> assign_drift_devices(int num_devices, double drift_fraction, std::uint64_t seed) {
  if (num_devices < 0) throw InvalidInput("assign_drift_devices: negative device count");
  if (!(drift_fraction >= 0.0 && drift_fraction <= 1.0)) throw InvalidInput("assign_drift_devices: fraction must be in [0, 1]");
  const auto m = static_cast<int>(std::llround(drift_fraction * num_devices));
  std::vector<int> ids(static_cast<std::size_t>(num_devices));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed, {tag(Channel::drift_assign)});
  for (int i = 0; i < m; ++i) {
    const auto j = i + static_cast<int>(rng.index(static_cast<std::uint64_t>(num_devices - i)));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(m));
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace fedcond
