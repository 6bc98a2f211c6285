#pragma once

// Run configuration. The on-disk format is flat `key = value` lines with
// `#` comments. Every key has a default; unknown keys, malformed values and
// out-of-range values are rejected with the key and line in the message.

#include "fedcond/client.hpp"
#include "fedcond/drift.hpp"
#include "fedcond/errors.hpp"
#include "fedcond/log.hpp"
#include "fedcond/model.hpp"
#include "fedcond/streams.hpp"
#include "fedcond/text.hpp"

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fedcond {

enum class AlgorithmMode { fedcond, async_broadcast, fedavg, fedprox };

inline std::string_view to_string(AlgorithmMode m) {
  switch (m) {
    case AlgorithmMode::fedcond: return "fedcond";
    case AlgorithmMode::async_broadcast: return "async-broadcast";
    case AlgorithmMode::fedavg: return "fedavg";
    case AlgorithmMode::fedprox: return "fedprox";
  }
  return "?";
}

inline constexpr AlgorithmMode kAllModes[] = {AlgorithmMode::fedcond, AlgorithmMode::async_broadcast, AlgorithmMode::fedavg,
                                              AlgorithmMode::fedprox};

inline bool is_synchronous(AlgorithmMode m) { return m == AlgorithmMode::fedavg || m == AlgorithmMode::fedprox; }

inline constexpr double kDefaultFedproxMu = 0.01;

struct RunConfig {
  AlgorithmMode mode = AlgorithmMode::fedcond;
  int num_devices = 20;

  // Scheduling / aggregation.
  double gamma = 0.2;
  int max_update_lead = 1;
  double participation = 0.2;
  std::optional<double> fedprox_mu;
  std::size_t scalar_bytes = 4;
  std::optional<std::size_t> fixed_total_samples;
  double staleness_exponent = 0.0;

  // Drift detection and lambda adaptation.
  double lambda_initial = 0.1;
  double lambda_escalation = 2.0;
  double lambda_max = 1000.0;
  std::optional<double> lambda_floor;
  double lambda_decay = 1.0;
  double significance = 0.05;
  std::size_t queue_capacity = 20;
  std::size_t warmup = 5;
  DeltaMode delta_mode = DeltaMode::inverse_total;
  std::optional<double> delta_threshold;  // accepted and reported; has no effect
  bool exclude_drifted_scores = false;

  // Drift injection.
  double drift_fraction = 0.1;
  DriftKind drift_kind = DriftKind::sudden;
  double drift_start = 0.4;
  std::optional<std::size_t> drift_duration;
  double corrupt_low = 10.0;
  double corrupt_high = 1000.0;

  // Streams.
  StreamSource stream_source = StreamSource::rotating_hyperplane;
  std::size_t samples_per_round = 20;
  std::size_t total_rounds = 100;
  double growth_per_round = 0.0;
  double rotation_rate = 0.0;
  double concept_shift_angle = std::numbers::pi / 2;
  double cluster_separation = 2.0;
  double label_noise = 0.0;
  std::size_t test_samples = 200;
  std::string csv_path;

  // Model and training.
  ModelKind model_kind = ModelKind::logistic_classification;
  Head model_head = Head::classification;
  int input_dim = 10;
  int hidden_dim = 0;
  int output_dim = 2;
  LossKind loss = LossKind::cross_entropy;
  Metric metric = Metric::error_rate;
  double learning_rate = 0.05;
  int local_epochs = 2;
  std::size_t minibatch_size = 0;
  std::size_t buffer_window = 0;
  ProximalStep proximal_step = ProximalStep::implicit;

  // Latency.
  double compute_median = 1.0;
  double compute_sigma = 0.2;
  double compute_spread = 0.0;  // per-device median *= exp(U(-spread, spread))
  int slow_devices = 0;         // the highest ids get slow_factor x the median
  double slow_factor = 10.0;
  double uplink_median = 0.1;
  double downlink_median = 0.1;
  double network_sigma = 0.2;

  // Seeds and run length.
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> data_seed;
  std::optional<std::uint64_t> latency_seed;
  std::optional<std::uint64_t> sampling_seed;
  double sim_duration = 1e9;
  std::optional<double> target_score;

  ModelSpec model_spec() const {
    ModelSpec s;
    s.kind = model_kind;
    s.input_dim = input_dim;
    s.hidden_dim = hidden_dim;
    s.output_dim = output_dim;
    s.head = model_kind == ModelKind::linear_regression         ? Head::regression
             : model_kind == ModelKind::logistic_classification ? Head::classification
                                                                 : model_head;
    return s;
  }

  double effective_fedprox_mu() const { return fedprox_mu.value_or(kDefaultFedproxMu); }
  std::uint64_t effective_data_seed() const { return data_seed.value_or(derive_seed(seed, {0xDA7A})); }
  std::uint64_t effective_latency_seed() const { return latency_seed.value_or(derive_seed(seed, {0x1A7E})); }
  std::uint64_t effective_sampling_seed() const { return sampling_seed.value_or(derive_seed(seed, {0x5A3B})); }

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

template <typename Int>
Int parse_integer(std::string_view s) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) throw std::invalid_argument("expected an integer, got '" + std::string(s) + "'");
  return v;
}

inline double parse_real(std::string_view s) {
  double v{};
  if (!parse_double(s, v)) throw std::invalid_argument("expected a finite number, got '" + std::string(s) + "'");
  return v;
}

inline bool parse_bool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(s) + "'");
}

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const Enum (&values)[N]) {
  std::string allowed;
  for (Enum e : values) {
    if (to_string(e) == s) return e;
    allowed += (allowed.empty() ? "" : ", ") + std::string(to_string(e));
  }
  throw std::invalid_argument("expected one of {" + allowed + "}, got '" + std::string(s) + "'");
}

inline void require(bool ok, const char* what) {
  if (!ok) throw std::out_of_range(what);
}

struct KeySpec {
  std::string_view name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::optional<std::string>(const RunConfig&)> get;  // nullopt: unset optional
};

// Builders for the common field shapes.
inline KeySpec real_key(std::string_view name, double RunConfig::*field, std::function<bool(double)> ok, const char* range) {
  return {name,
          [=](RunConfig& c, std::string_view v) {
            const double x = parse_real(v);
            require(ok(x), range);
            c.*field = x;
          },
          [=](const RunConfig& c) { return std::optional<std::string>(format_double(c.*field)); }};
}

inline KeySpec opt_real_key(std::string_view name, std::optional<double> RunConfig::*field, std::function<bool(double)> ok,
                            const char* range) {
  return {name,
          [=](RunConfig& c, std::string_view v) {
            const double x = parse_real(v);
            require(ok(x), range);
            c.*field = x;
          },
          [=](const RunConfig& c) {
            return (c.*field) ? std::optional<std::string>(format_double(*(c.*field))) : std::nullopt;
          }};
}

template <typename Int>
KeySpec int_key(std::string_view name, Int RunConfig::*field, Int min_value, const char* range) {
  return {name,
          [=](RunConfig& c, std::string_view v) {
            const Int x = parse_integer<Int>(v);
            require(x >= min_value, range);
            c.*field = x;
          },
          [=](const RunConfig& c) { return std::optional<std::string>(std::to_string(c.*field)); }};
}

template <typename Int>
KeySpec opt_int_key(std::string_view name, std::optional<Int> RunConfig::*field, Int min_value, const char* range) {
  return {name,
          [=](RunConfig& c, std::string_view v) {
            const Int x = parse_integer<Int>(v);
            require(x >= min_value, range);
            c.*field = x;
          },
          [=](const RunConfig& c) { return (c.*field) ? std::optional<std::string>(std::to_string(*(c.*field))) : std::nullopt; }};
}

template <typename Enum, std::size_t N>
KeySpec enum_key(std::string_view name, Enum RunConfig::*field, const Enum (&values)[N]) {
  return {name, [=, &values](RunConfig& c, std::string_view v) { c.*field = parse_enum(v, values); },
          [=](const RunConfig& c) { return std::optional<std::string>(std::string(to_string(c.*field))); }};
}

inline KeySpec bool_key(std::string_view name, bool RunConfig::*field) {
  return {name, [=](RunConfig& c, std::string_view v) { c.*field = parse_bool(v); },
          [=](const RunConfig& c) { return std::optional<std::string>(c.*field ? "true" : "false"); }};
}

inline constexpr AlgorithmMode kModes[] = {AlgorithmMode::fedcond, AlgorithmMode::async_broadcast, AlgorithmMode::fedavg,
                                           AlgorithmMode::fedprox};
inline constexpr DeltaMode kDeltaModes[] = {DeltaMode::inverse_total, DeltaMode::literal};
inline constexpr DriftKind kDriftKinds[] = {DriftKind::none, DriftKind::sudden, DriftKind::gradual};
inline constexpr StreamSource kSources[] = {StreamSource::rotating_hyperplane, StreamSource::gaussian_clusters, StreamSource::csv_file};
inline constexpr ModelKind kModelKinds[] = {ModelKind::linear_regression, ModelKind::logistic_classification, ModelKind::mlp_1_hidden};
inline constexpr LossKind kLosses[] = {LossKind::cross_entropy, LossKind::mean_absolute_error};
inline constexpr Metric kMetrics[] = {Metric::error_rate, Metric::smape, Metric::one_minus_f1};
inline constexpr ProximalStep kSteps[] = {ProximalStep::implicit, ProximalStep::explicit_gradient};

inline constexpr Head kHeads[] = {Head::classification, Head::regression};

inline const std::vector<KeySpec>& key_registry() {
  const auto positive = [](double x) { return x > 0.0; };
  const auto non_negative = [](double x) { return x >= 0.0; };
  const auto unit_closed = [](double x) { return x >= 0.0 && x <= 1.0; };
  static const std::vector<KeySpec> keys = {
      enum_key("mode", &RunConfig::mode, kModes),
      int_key<int>("num_devices", &RunConfig::num_devices, 1, "must be >= 1"),
      real_key("gamma", &RunConfig::gamma, [](double x) { return x > 0.0 && x <= 1.0; }, "must be in (0, 1]"),
      int_key<int>("max_update_lead", &RunConfig::max_update_lead, -1, "must be >= -1 (-1 = unbounded)"),
      real_key("participation", &RunConfig::participation, [](double x) { return x > 0.0 && x <= 1.0; }, "must be in (0, 1]"),
      opt_real_key("fedprox_mu", &RunConfig::fedprox_mu, non_negative, "must be >= 0"),
      int_key<std::size_t>("scalar_bytes", &RunConfig::scalar_bytes, 1, "must be >= 1"),
      opt_int_key<std::size_t>("fixed_total_samples", &RunConfig::fixed_total_samples, 1, "must be >= 1"),
      real_key("staleness_exponent", &RunConfig::staleness_exponent, non_negative, "must be >= 0"),
      real_key("lambda_initial", &RunConfig::lambda_initial, non_negative, "must be >= 0"),
      real_key("lambda_escalation", &RunConfig::lambda_escalation, positive, "must be > 0"),
      real_key("lambda_max", &RunConfig::lambda_max, non_negative, "must be >= 0"),
      opt_real_key("lambda_floor", &RunConfig::lambda_floor, non_negative, "must be >= 0"),
      real_key("lambda_decay", &RunConfig::lambda_decay, [](double x) { return x > 0.0 && x <= 1.0; }, "must be in (0, 1]"),
      real_key("significance", &RunConfig::significance, [](double x) { return x > 0.0 && x < 1.0; }, "must be in (0, 1)"),
      int_key<std::size_t>("queue_capacity", &RunConfig::queue_capacity, 1, "must be >= 1"),
      int_key<std::size_t>("warmup", &RunConfig::warmup, 1, "must be >= 1"),
      enum_key("delta_mode", &RunConfig::delta_mode, kDeltaModes),
      opt_real_key("delta_threshold", &RunConfig::delta_threshold, non_negative, "must be >= 0"),
      bool_key("exclude_drifted_scores", &RunConfig::exclude_drifted_scores),
      real_key("drift_fraction", &RunConfig::drift_fraction, unit_closed, "must be in [0, 1]"),
      enum_key("drift_kind", &RunConfig::drift_kind, kDriftKinds),
      real_key("drift_start", &RunConfig::drift_start, unit_closed, "must be in [0, 1]"),
      opt_int_key<std::size_t>("drift_duration", &RunConfig::drift_duration, 1, "must be >= 1"),
      real_key("corrupt_low", &RunConfig::corrupt_low, [](double) { return true; }, ""),
      real_key("corrupt_high", &RunConfig::corrupt_high, [](double) { return true; }, ""),
      enum_key("stream_source", &RunConfig::stream_source, kSources),
      int_key<std::size_t>("samples_per_round", &RunConfig::samples_per_round, 1, "must be >= 1"),
      int_key<std::size_t>("total_rounds", &RunConfig::total_rounds, 1, "must be >= 1"),
      real_key("growth_per_round", &RunConfig::growth_per_round, non_negative, "must be >= 0"),
      real_key("rotation_rate", &RunConfig::rotation_rate, [](double) { return true; }, ""),
      real_key("concept_shift_angle", &RunConfig::concept_shift_angle, [](double) { return true; }, ""),
      real_key("cluster_separation", &RunConfig::cluster_separation, non_negative, "must be >= 0"),
      real_key("label_noise", &RunConfig::label_noise, unit_closed, "must be in [0, 1]"),
      int_key<std::size_t>("test_samples", &RunConfig::test_samples, 1, "must be >= 1"),
      {"csv_path", [](RunConfig& c, std::string_view v) { c.csv_path = std::string(v); },
       [](const RunConfig& c) { return c.csv_path.empty() ? std::nullopt : std::optional<std::string>(c.csv_path); }},
      enum_key("model_kind", &RunConfig::model_kind, kModelKinds),
      enum_key("model_head", &RunConfig::model_head, kHeads),
      int_key<int>("input_dim", &RunConfig::input_dim, 1, "must be >= 1"),
      int_key<int>("hidden_dim", &RunConfig::hidden_dim, 0, "must be >= 0"),
      int_key<int>("output_dim", &RunConfig::output_dim, 1, "must be >= 1"),
      enum_key("loss", &RunConfig::loss, kLosses),
      enum_key("metric", &RunConfig::metric, kMetrics),
      real_key("learning_rate", &RunConfig::learning_rate, positive, "must be > 0"),
      int_key<int>("local_epochs", &RunConfig::local_epochs, 1, "must be >= 1"),
      int_key<std::size_t>("minibatch_size", &RunConfig::minibatch_size, 0, "must be >= 0"),
      int_key<std::size_t>("buffer_window", &RunConfig::buffer_window, 0, "must be >= 0"),
      enum_key("proximal_step", &RunConfig::proximal_step, kSteps),
      real_key("compute_median", &RunConfig::compute_median, positive, "must be > 0"),
      real_key("compute_sigma", &RunConfig::compute_sigma, non_negative, "must be >= 0"),
      real_key("compute_spread", &RunConfig::compute_spread, non_negative, "must be >= 0"),
      int_key<int>("slow_devices", &RunConfig::slow_devices, 0, "must be >= 0"),
      real_key("slow_factor", &RunConfig::slow_factor, positive, "must be > 0"),
      real_key("uplink_median", &RunConfig::uplink_median, positive, "must be > 0"),
      real_key("downlink_median", &RunConfig::downlink_median, positive, "must be > 0"),
      real_key("network_sigma", &RunConfig::network_sigma, non_negative, "must be >= 0"),
      int_key<std::uint64_t>("seed", &RunConfig::seed, 0, ""),
      opt_int_key<std::uint64_t>("data_seed", &RunConfig::data_seed, 0, ""),
      opt_int_key<std::uint64_t>("latency_seed", &RunConfig::latency_seed, 0, ""),
      opt_int_key<std::uint64_t>("sampling_seed", &RunConfig::sampling_seed, 0, ""),
      real_key("sim_duration", &RunConfig::sim_duration, non_negative, "must be >= 0"),
      opt_real_key("target_score", &RunConfig::target_score, non_negative, "must be >= 0"),
  };
  return keys;
}

inline const KeySpec* find_key(std::string_view name) {
  for (const auto& k : key_registry())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace detail

/// Sets one key from its textual value. `where` prefixes error messages
/// (e.g. "config.cfg:3" or "flag --gamma").
inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value, const std::string& where) {
  const detail::KeySpec* spec = detail::find_key(key);
  if (!spec) throw ConfigError(where + ": unknown key '" + std::string(key) + "'");
  try {
    spec->set(cfg, value);
  } catch (const std::out_of_range& e) {
    throw ConfigError(where + ": key '" + std::string(key) + "': value " + std::string(value) + " out of range (" + e.what() + ")");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": key '" + std::string(key) + "': " + e.what());
  }
}

/// Cross-field checks; messages name the offending keys.
inline void validate(const RunConfig& c) {
  const ModelSpec spec = c.model_spec();
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("keys model_kind/input_dim/hidden_dim/output_dim: ") + e.what());
  }
  try {
    check_compatible(spec, c.loss);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("key 'loss': ") + e.what());
  }
  try {
    check_compatible(spec, c.metric);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("key 'metric': ") + e.what());
  }
  if (c.lambda_max < c.lambda_initial) throw ConfigError("key 'lambda_max': must be at least lambda_initial");
  if (c.lambda_floor && *c.lambda_floor > c.lambda_initial) throw ConfigError("key 'lambda_floor': must not exceed lambda_initial");
  if (c.warmup > c.queue_capacity) throw ConfigError("key 'warmup': must not exceed queue_capacity");
  if (c.corrupt_low > c.corrupt_high) throw ConfigError("key 'corrupt_low': must not exceed corrupt_high");
  if (c.drift_kind == DriftKind::gradual && !c.drift_duration) throw ConfigError("key 'drift_duration': required for gradual drift");
  if (c.slow_devices > c.num_devices) throw ConfigError("key 'slow_devices': exceeds num_devices");
  if (c.stream_source == StreamSource::csv_file) {
    if (c.csv_path.empty()) throw ConfigError("key 'csv_path': required when stream_source = csv-file");
    if (c.drift_kind == DriftKind::gradual) throw ConfigError("key 'drift_kind': gradual drift needs a synthetic stream_source");
  } else {
    if (!spec.classification()) throw ConfigError("key 'model_kind': synthetic streams are classification tasks");
    if (c.stream_source == StreamSource::rotating_hyperplane) {
      if (c.output_dim != 2) throw ConfigError("key 'output_dim': rotating-hyperplane streams are binary (output_dim = 2)");
      if (c.input_dim < 2) throw ConfigError("key 'input_dim': rotating-hyperplane streams need input_dim >= 2");
    }
  }
}

/// Parses `key = value` text on top of `base` (no cross-field validation).
inline RunConfig parse_config_text(std::string_view text, const std::string& source, RunConfig base = {}) {
  std::map<std::string, std::size_t, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::string where = source + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value', got '" + std::string(line) + "'");
    const std::string_view key = detail::trim(line.substr(0, eq));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (auto it = seen.find(key); it != seen.end())
      throw ConfigError(where + ": key '" + std::string(key) + "' repeats line " + std::to_string(it->second));
    seen.emplace(std::string(key), line_no);
    apply_setting(base, key, value, where);
    if (end == text.size()) break;
  }
  return base;
}

/// Defaults, with the master seed taken from FEDCOND_SEED when set.
inline RunConfig default_config() {
  RunConfig c;
  if (const char* env = std::getenv("FEDCOND_SEED"); env && *env) apply_setting(c, "seed", env, "env FEDCOND_SEED");
  return c;
}

inline RunConfig parse_config(const std::string& path, RunConfig base = default_config()) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path, std::move(base));
}

/// Validates and logs any mode-specific default that was filled in.
inline void finalize(const RunConfig& cfg) {
  validate(cfg);
  if (cfg.mode == AlgorithmMode::fedprox && !cfg.fedprox_mu)
    log::notice("fedprox_mu not set; using " + detail::format_double(kDefaultFedproxMu));
}

/// Defaults < FEDCOND_SEED < file < overrides (applied in order), then validated.
inline RunConfig load_config(const std::optional<std::string>& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  RunConfig cfg = path ? parse_config(*path) : default_config();
  for (const auto& [key, value] : overrides) apply_setting(cfg, key, value, "flag --" + key);
  finalize(cfg);
  return cfg;
}

/// Serializes every key (unset optionals omitted) in registry order.
inline std::string emit_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : detail::key_registry()) {
    if (auto v = k.get(cfg)) out += std::string(k.name) + " = " + *v + "\n";
  }
  return out;
}

inline std::vector<std::string_view> config_keys() {
  std::vector<std::string_view> names;
  for (const auto& k : detail::key_registry()) names.push_back(k.name);
  return names;
}

}  // namespace fedcond
