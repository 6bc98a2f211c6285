#pragma once

// Discrete-event simulation of the four training modes in simulated
// seconds. Events are processed strictly in (timestamp, sequence_no) order
// on one thread, so a RunConfig fully determines the output.
//
//   fedcond          fewest-updates dispatch capped at ceil(gamma K) active
//                    devices; drift detection and lambda escalation on.
//   async-broadcast  every aggregation is broadcast to all K devices; a
//                    device retrains as soon as it is free and holds a newer
//                    model; fixed lambda, no detection.
//   fedavg/fedprox   synchronous rounds over a sampled fraction of devices;
//                    a round lasts as long as its slowest participant.

#include "fedcond/client.hpp"
#include "fedcond/config.hpp"
#include "fedcond/csv.hpp"
#include "fedcond/errors.hpp"
#include "fedcond/latency.hpp"
#include "fedcond/metrics.hpp"
#include "fedcond/model.hpp"
#include "fedcond/records.hpp"
#include "fedcond/server.hpp"
#include "fedcond/streams.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedcond {

enum class EventKind { dispatch, train_complete, upload_arrive, sim_end };

struct SimEvent {
  double timestamp = 0.0;
  std::uint64_t sequence_no = 0;
  EventKind kind = EventKind::sim_end;
  int device_id = -1;
  ParamVector model;            // dispatch: the global model sent
  std::size_t model_version = 0;
  std::optional<LocalUpdate> update;  // train_complete / upload_arrive
};

/// Min-queue on (timestamp, sequence_no); sequence numbers are assigned on push.
class EventQueue {
 public:
  const SimEvent& push(SimEvent e) {
    e.sequence_no = next_seq_++;
    heap_.push(std::move(e));
    return heap_.top();
  }

  SimEvent pop() {
    SimEvent e = heap_.top();
    heap_.pop();
    if (e.timestamp < now_) throw std::logic_error("event queue: time went backwards");
    now_ = e.timestamp;
    return e;
  }

  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  double now() const { return now_; }

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      if (a.timestamp != b.timestamp) return a.timestamp > b.timestamp;
      return a.sequence_no > b.sequence_no;
    }
  };
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
  std::uint64_t next_seq_ = 0;
  double now_ = 0.0;
};

/// Everything derived from a RunConfig before the clock starts.
struct Scenario {
  RunConfig config;
  ModelSpec model;
  std::vector<StreamSpec> streams;
  std::vector<DriftPlan> plans;
  std::vector<int> drift_devices;
  LatencyProfile latency;
  ClientContext client;
  ServerSettings server;
  ParamVector initial_model;

  std::size_t num_devices() const { return streams.size(); }
};

inline LatencyProfile make_latency_profile(const RunConfig& c, std::size_t num_devices) {
  LatencyProfile p;
  p.seed = c.effective_latency_seed();
  p.compute_sigma = c.compute_sigma;
  p.uplink_median = c.uplink_median;
  p.downlink_median = c.downlink_median;
  p.network_sigma = c.network_sigma;
  Rng spread(p.seed, {tag(Channel::heterogeneity)});
  for (std::size_t d = 0; d < num_devices; ++d) {
    double m = c.compute_median;
    if (c.compute_spread > 0.0) m *= std::exp(spread.uniform(-c.compute_spread, c.compute_spread));
    if (d >= num_devices - static_cast<std::size_t>(c.slow_devices)) m *= c.slow_factor;
    p.compute_median.push_back(m);
  }
  return p;
}

inline Scenario build_scenario(const RunConfig& c) {
  validate(c);
  Scenario s;
  s.config = c;
  s.model = c.model_spec();
  const std::uint64_t data_seed = c.effective_data_seed();

  if (c.stream_source == StreamSource::csv_file) {
    CsvSchema schema;
    schema.num_devices = c.num_devices;
    schema.classification = s.model.classification();
    schema.num_classes = s.model.classification() ? c.output_dim : 0;
    schema.samples_per_round = c.samples_per_round;
    schema.seed = data_seed;
    s.streams = load_csv(c.csv_path, schema);
    if (s.streams.front().input_dim != c.input_dim)
      throw ConfigError("key 'input_dim': csv file has " + std::to_string(s.streams.front().input_dim) + " feature columns");
  } else {
    for (int d = 0; d < c.num_devices; ++d) {
      StreamSpec st;
      st.source = c.stream_source;
      st.input_dim = c.input_dim;
      st.num_classes = c.output_dim;
      st.samples_per_round = c.samples_per_round;
      st.total_rounds = c.total_rounds;
      st.seed = derive_seed(data_seed, {static_cast<std::uint64_t>(d)});
      st.concept_seed = data_seed;
      st.growth_per_round = c.growth_per_round;
      st.rotation_rate = c.rotation_rate;
      st.concept_shift_angle = c.concept_shift_angle;
      st.cluster_separation = c.cluster_separation;
      st.label_noise = c.label_noise;
      s.streams.push_back(std::move(st));
    }
  }

  s.drift_devices = assign_drift_devices(static_cast<int>(s.streams.size()), c.drift_kind == DriftKind::none ? 0.0 : c.drift_fraction, data_seed);
  DriftPlan drift;
  drift.kind = c.drift_kind;
  drift.start_fraction = c.drift_start;
  drift.duration_rounds = c.drift_duration;
  drift.corrupt_low = c.corrupt_low;
  drift.corrupt_high = c.corrupt_high;
  drift.validate();
  s.plans.assign(s.streams.size(), DriftPlan{});
  for (int d : s.drift_devices) s.plans[static_cast<std::size_t>(d)] = drift;

  s.latency = make_latency_profile(c, s.streams.size());
  s.latency.validate();

  s.client.model = s.model;
  s.client.loss = c.loss;
  s.client.metric = c.metric;
  s.client.detector.significance = c.significance;
  s.client.detector.delta_mode = c.delta_mode;
  s.client.detector.warmup = c.warmup;
  s.client.queue_capacity = c.queue_capacity;
  s.client.exclude_drifted_scores = c.exclude_drifted_scores;
  s.client.minibatch_size = c.minibatch_size;
  s.client.step = c.proximal_step;
  s.client.policy.lambda_initial = c.lambda_initial;
  s.client.policy.escalation_factor = c.lambda_escalation;
  s.client.policy.lambda_max = c.lambda_max;
  s.client.policy.lambda_floor = c.lambda_floor;
  s.client.policy.decay_factor = c.lambda_decay;
  switch (c.mode) {
    case AlgorithmMode::fedcond: s.client.detection_enabled = true; break;
    case AlgorithmMode::async_broadcast: s.client.detection_enabled = false; break;
    case AlgorithmMode::fedavg:
    case AlgorithmMode::fedprox: {
      const double mu = c.mode == AlgorithmMode::fedprox ? c.effective_fedprox_mu() : 0.0;
      s.client.detection_enabled = false;
      s.client.policy = AdaptationPolicy{mu, 1.0, mu, std::nullopt, 1.0};
      break;
    }
  }
  s.client.policy.validate();

  s.server.gamma = c.gamma;
  s.server.model_bytes = model_bytes(s.model, c.scalar_bytes);
  s.server.max_update_lead = c.max_update_lead;
  s.server.fixed_total_samples = c.fixed_total_samples;
  s.server.staleness_exponent = c.staleness_exponent;

  s.initial_model = initial_parameters(s.model, data_seed);
  return s;
}

struct RunResult {
  AlgorithmMode mode = AlgorithmMode::fedcond;
  Metric metric = Metric::error_rate;
  std::vector<RoundRecord> records;
  std::vector<double> initial_scores;
  double initial_mean_score = 0.0;
  std::vector<int> drift_devices;
  std::optional<double> drift_onset_time;  // first time a drifted batch was drawn
  double end_time = 0.0;
  std::size_t aggregations = 0;
  std::size_t rejected_updates = 0;
  std::size_t dispatches = 0;
  std::size_t events_processed = 0;
  std::size_t max_active = 0;
  std::size_t model_bytes = 0;
  std::vector<std::size_t> final_ledger;
  std::uint64_t uplink_bytes = 0;    // run totals, including transfers after the last record
  std::uint64_t downlink_bytes = 0;
};

namespace detail {

class Engine {
 public:
  explicit Engine(Scenario scenario) : sc_(std::move(scenario)) {
    const std::size_t k = sc_.num_devices();
    for (std::size_t d = 0; d < k; ++d)
      devices_.push_back(make_device(static_cast<int>(d), sc_.streams[d], sc_.plans[d], sc_.initial_model, sc_.client,
                                     sc_.config.learning_rate, sc_.config.local_epochs, sc_.config.buffer_window));
    server_ = make_server(sc_.initial_model, k, sc_.server);
    finished_.assign(k, 0);
    latency_round_.assign(k, 0);
    test_cache_.resize(k);
    is_drift_device_.assign(k, 0);
    for (int d : sc_.drift_devices) is_drift_device_[static_cast<std::size_t>(d)] = 1;
    result_.mode = sc_.config.mode;
    result_.metric = sc_.config.metric;
    result_.drift_devices = sc_.drift_devices;
    result_.model_bytes = sc_.server.model_bytes;
    result_.initial_scores = test_scores(server_.global_model);
    result_.initial_mean_score = mean_variance(result_.initial_scores).mean;
  }

  RunResult run() {
    switch (sc_.config.mode) {
      case AlgorithmMode::fedcond: run_fedcond(); break;
      case AlgorithmMode::async_broadcast: run_broadcast(); break;
      case AlgorithmMode::fedavg:
      case AlgorithmMode::fedprox: run_sync(); break;
    }
    result_.dispatches = server_.dispatches;
    result_.final_ledger = server_.ledger;
    result_.uplink_bytes = server_.uplink_bytes;
    result_.downlink_bytes = server_.downlink_bytes;
    return std::move(result_);
  }

 private:
  struct CachedTest {
    std::optional<std::size_t> round;
    StreamBatch batch;
  };

  const StreamBatch& test_set(std::size_t d) {
    const DeviceState& dev = devices_[d];
    const std::size_t round = std::min(dev.stream_position, dev.stream.total_rounds - 1);
    CachedTest& c = test_cache_[d];
    // Stationary synthetic concepts and CSV splits never change; others follow the stream.
    const bool fixed = dev.stream.source == StreamSource::csv_file ||
                       (dev.stream.rotation_rate == 0.0 && dev.plan.kind != DriftKind::gradual);
    if (!c.round || (!fixed && *c.round != round)) {
      c.batch = test_batch(dev.stream, dev.plan, round, sc_.config.test_samples);
      c.round = round;
    }
    return c.batch;
  }

  std::vector<double> test_scores(const ParamVector& w) {
    std::vector<double> out;
    out.reserve(devices_.size());
    for (std::size_t d = 0; d < devices_.size(); ++d) out.push_back(evaluate(sc_.model, w, test_set(d), sc_.config.metric).value);
    return out;
  }

  LatencySample next_latency(int d) {
    return sample_latency(sc_.latency, d, latency_round_[static_cast<std::size_t>(d)]++);
  }

  std::vector<double> lambdas() const {
    std::vector<double> out;
    for (const auto& dev : devices_) out.push_back(dev.lambda);
    return out;
  }

  void note_round(const ClientRoundResult& r, int d, double now) {
    if (r.verdict.drifted)
      pending_flags_.push_back(DriftFlag{d, r.round_index, r.verdict.statistic, r.verdict.p_value, true});
    if (r.drift_active && is_drift_device_[static_cast<std::size_t>(d)] && !result_.drift_onset_time) result_.drift_onset_time = now;
  }

  void record(double now, std::optional<int> source) {
    RoundRecord rec;
    rec.simulated_time = now;
    rec.event_index = result_.records.size();
    rec.mode = sc_.config.mode;
    rec.device_id = source;
    rec.device_scores = test_scores(server_.global_model);
    const MeanVariance mv = mean_variance(rec.device_scores);
    rec.mean_score = mv.mean;
    rec.variance = mv.variance;
    rec.drift_flags = std::move(pending_flags_);
    pending_flags_.clear();
    rec.ledger = server_.ledger;
    rec.uplink_bytes = server_.uplink_bytes;
    rec.downlink_bytes = server_.downlink_bytes;
    rec.lambdas = lambdas();
    result_.records.push_back(std::move(rec));
  }

  SimEvent model_event(double at, int d) const {
    SimEvent e;
    e.timestamp = at;
    e.kind = EventKind::dispatch;
    e.device_id = d;
    e.model = server_.global_model;
    e.model_version = server_.round_counter;
    return e;
  }

  // Returns false once the simulated horizon is hit.
  bool next_event(SimEvent& ev) {
    if (queue_.empty()) return false;
    ev = queue_.pop();
    ++result_.events_processed;
    if (ev.kind == EventKind::sim_end) {
      // Runs whose streams all ran dry end at their last real event.
      if (std::find(finished_.begin(), finished_.end(), 0) != finished_.end()) result_.end_time = ev.timestamp;
      return false;
    }
    result_.end_time = ev.timestamp;
    return true;
  }

  // ---- fedcond -----------------------------------------------------------

  std::vector<LatencySample> inflight_latency_;

  void send(int d, double now) {
    const LatencySample lat = next_latency(d);
    inflight_latency_[static_cast<std::size_t>(d)] = lat;
    queue_.push(model_event(now + lat.downlink, d));
  }

  void refill(double now) {
    std::vector<int> idle;
    for (std::size_t d = 0; d < devices_.size(); ++d)
      if (!finished_[d] && !server_.is_active(static_cast<int>(d))) idle.push_back(static_cast<int>(d));
    while (auto d = select_next_device(server_, idle)) send(*d, now);
  }

  void retire(int d) {
    finished_[static_cast<std::size_t>(d)] = 1;
    release(server_, d);
    server_.retired[static_cast<std::size_t>(d)] = 1;
  }

  void run_fedcond() {
    inflight_latency_.assign(devices_.size(), {});
    {
      SimEvent end;
      end.timestamp = sc_.config.sim_duration;
      queue_.push(std::move(end));
    }
    std::vector<int> all(devices_.size());
    std::iota(all.begin(), all.end(), 0);
    for (int d : init_dispatch(server_, all)) send(d, 0.0);
    check_cap();

    SimEvent ev;
    while (next_event(ev)) {
      const double now = ev.timestamp;
      const int d = ev.device_id;
      const auto du = static_cast<std::size_t>(d);
      switch (ev.kind) {
        case EventKind::dispatch: {
          auto r = client_round(devices_[du], ev.model, sc_.client);
          if (!r) {
            retire(d);
            refill(now);
            break;
          }
          note_round(*r, d, now);
          r->update.base_version = ev.model_version;
          SimEvent done;
          done.timestamp = now + inflight_latency_[du].compute;
          done.kind = EventKind::train_complete;
          done.device_id = d;
          done.update = std::move(r->update);
          queue_.push(std::move(done));
          break;
        }
        case EventKind::train_complete: {
          ev.update->round_stamp = now;
          ev.timestamp = now + inflight_latency_[du].uplink;
          ev.kind = EventKind::upload_arrive;
          queue_.push(std::move(ev));
          break;
        }
        case EventKind::upload_arrive: {
          release(server_, d);
          if (aggregate(server_, *ev.update)) {
            ++result_.aggregations;
            record(now, d);
          } else {
            ++result_.rejected_updates;
          }
          refill(now);
          break;
        }
        case EventKind::sim_end: break;
      }
      check_cap();
    }
  }

  void check_cap() {
    if (server_.active_count > server_.capacity()) throw std::logic_error("scheduler exceeded the concurrency cap");
    result_.max_active = std::max(result_.max_active, server_.active_count);
  }

  // ---- async-broadcast ---------------------------------------------------

  struct BroadcastDevice {
    bool busy = false;
    std::optional<SimEvent> pending;  // newest model received while busy
    LatencySample latency;
  };
  std::vector<BroadcastDevice> bdev_;

  void deliver_all(double now) {
    broadcast(server_);
    for (std::size_t d = 0; d < devices_.size(); ++d) {
      const LatencySample lat = next_latency(static_cast<int>(d));
      queue_.push(model_event(now + lat.downlink, static_cast<int>(d)));
    }
  }

  void start_training(int d, const SimEvent& model_ev, double now) {
    const auto du = static_cast<std::size_t>(d);
    auto r = client_round(devices_[du], model_ev.model, sc_.client);
    if (!r) {
      finished_[du] = 1;
      return;
    }
    note_round(*r, d, now);
    r->update.base_version = model_ev.model_version;
    bdev_[du].busy = true;
    bdev_[du].latency = next_latency(d);
    SimEvent done;
    done.timestamp = now + bdev_[du].latency.compute;
    done.kind = EventKind::train_complete;
    done.device_id = d;
    done.update = std::move(r->update);
    queue_.push(std::move(done));
  }

  void run_broadcast() {
    bdev_.assign(devices_.size(), {});
    {
      SimEvent end;
      end.timestamp = sc_.config.sim_duration;
      queue_.push(std::move(end));
    }
    deliver_all(0.0);

    SimEvent ev;
    while (next_event(ev)) {
      const double now = ev.timestamp;
      const int d = ev.device_id;
      const auto du = static_cast<std::size_t>(d);
      switch (ev.kind) {
        case EventKind::dispatch:
          if (finished_[du]) break;
          if (bdev_[du].busy) {
            bdev_[du].pending = std::move(ev);
          } else {
            start_training(d, ev, now);
          }
          break;
        case EventKind::train_complete: {
          ev.update->round_stamp = now;
          ev.timestamp = now + bdev_[du].latency.uplink;
          ev.kind = EventKind::upload_arrive;
          queue_.push(std::move(ev));
          bdev_[du].busy = false;
          if (bdev_[du].pending) {
            SimEvent next = std::move(*bdev_[du].pending);
            bdev_[du].pending.reset();
            start_training(d, next, now);
          }
          break;
        }
        case EventKind::upload_arrive:
          if (aggregate(server_, *ev.update)) {
            ++result_.aggregations;
            record(now, d);
            deliver_all(now);
          } else {
            ++result_.rejected_updates;
          }
          break;
        case EventKind::sim_end: break;
      }
    }
  }

  // ---- synchronous baselines ---------------------------------------------

  void run_sync() {
    const std::size_t k = devices_.size();
    const std::size_t per_round = concurrency_cap(sc_.config.participation, k);
    const std::uint64_t sampling_seed = sc_.config.effective_sampling_seed();
    double now = 0.0;
    for (std::size_t round = 0;; ++round) {
      std::vector<int> candidates;
      for (std::size_t d = 0; d < k; ++d)
        if (!finished_[d]) candidates.push_back(static_cast<int>(d));
      if (candidates.empty()) break;

      Rng rng(sampling_seed, {tag(Channel::participation), round});
      const std::size_t m = std::min(per_round, candidates.size());
      for (std::size_t i = 0; i < m; ++i) std::swap(candidates[i], candidates[i + rng.index(candidates.size() - i)]);
      candidates.resize(m);
      std::sort(candidates.begin(), candidates.end());

      const ParamVector global = server_.global_model;
      server_.downlink_bytes += m * server_.settings.model_bytes;
      server_.dispatches += m;
      double round_time = 0.0;
      std::vector<LocalUpdate> updates;
      for (int d : candidates) {
        const LatencySample lat = next_latency(d);
        auto r = client_round(devices_[static_cast<std::size_t>(d)], global, sc_.client);
        if (!r) {
          finished_[static_cast<std::size_t>(d)] = 1;
          continue;
        }
        note_round(*r, d, now);
        round_time = std::max(round_time, lat.total());
        updates.push_back(std::move(r->update));
      }
      if (updates.empty()) continue;
      if (now + round_time > sc_.config.sim_duration) {
        result_.end_time = sc_.config.sim_duration;
        break;
      }
      now += round_time;

      ParamVector sum = ParamVector::Zero(global.size());
      std::size_t total = 0;
      for (auto& u : updates) {
        u.round_stamp = now;
        if (!u.trained_model.allFinite()) {
          ++result_.rejected_updates;
          continue;
        }
        sum += static_cast<double>(u.sample_count) * u.trained_model;
        total += u.sample_count;
        ++server_.ledger[static_cast<std::size_t>(u.device_id)];
        server_.uplink_bytes += server_.settings.model_bytes;
      }
      if (total > 0) {
        server_.global_model = sum / static_cast<double>(total);
        ++server_.round_counter;
        ++result_.aggregations;
      }
      result_.end_time = now;
      record(now, std::nullopt);
    }
  }

  Scenario sc_;
  std::vector<DeviceState> devices_;
  ServerState server_;
  EventQueue queue_;
  std::vector<std::uint8_t> finished_;
  std::vector<std::size_t> latency_round_;
  std::vector<CachedTest> test_cache_;
  std::vector<std::uint8_t> is_drift_device_;
  std::vector<DriftFlag> pending_flags_;
  RunResult result_;
};

}  // namespace detail

inline RunResult run(const Scenario& scenario) { return detail::Engine(scenario).run(); }

/// Runs the configured mode.
inline RunResult run(const RunConfig& config) { return run(build_scenario(config)); }

/// Runs a synchronous baseline on the given scenario config.
inline RunResult run_sync_baseline(RunConfig config, AlgorithmMode mode) {
  if (!is_synchronous(mode)) throw ConfigError("key 'mode': run_sync_baseline needs fedavg or fedprox");
  config.mode = mode;
  return run(config);
}

}  // namespace fedcond
