#pragma once

// The per-device learning loop: receive the global model, score it on the
// newly arrived batch, test for drift, adapt lambda, then train on
// h(w_k) = f(w_k) + lambda/2 * ||w_k - w||^2 and emit the update.

#include "fedcond/batch.hpp"
#include "fedcond/drift.hpp"
#include "fedcond/errors.hpp"
#include "fedcond/log.hpp"
#include "fedcond/model.hpp"
#include "fedcond/streams.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedcond {

// How the proximal term enters a gradient step.
//   explicit_gradient : w <- w - eta * (grad f(w) + lambda (w - w_g))
//   implicit          : w <- (w - eta * grad f(w) + eta * lambda * w_g) / (1 + eta * lambda)
// The implicit form is a gradient step on h with step eta / (1 + eta * lambda);
// it stays stable for any lambda, the explicit one needs eta * lambda < 2.
enum class ProximalStep { explicit_gradient, implicit };

inline std::string_view to_string(ProximalStep s) { return s == ProximalStep::implicit ? "implicit" : "explicit"; }

struct TrainSettings {
  double learning_rate = 0.05;
  int local_epochs = 2;
  std::size_t minibatch_size = 0;  // 0 = full batch
  ProximalStep step = ProximalStep::implicit;
  double divergence_loss = 1e6;
};

/// Accumulated training samples of one device. window = 0 keeps everything;
/// otherwise only the newest `window` samples are kept.
class TrainBuffer {
 public:
  TrainBuffer() = default;
  TrainBuffer(int input_dim, std::size_t window) : dim_(input_dim), window_(window) {}

  void append(const StreamBatch& batch) {
    if (batch.features.cols() != dim_) throw InvalidInput("TrainBuffer: feature width mismatch");
    for (Eigen::Index i = 0; i < batch.features.rows(); ++i) {
      for (Eigen::Index j = 0; j < batch.features.cols(); ++j) x_.push_back(batch.features(i, j));
      y_.push_back(batch.labels[i]);
    }
    if (window_ > 0 && y_.size() > window_) {
      const std::size_t drop = y_.size() - window_;
      x_.erase(x_.begin(), x_.begin() + static_cast<std::ptrdiff_t>(drop * static_cast<std::size_t>(dim_)));
      y_.erase(y_.begin(), y_.begin() + static_cast<std::ptrdiff_t>(drop));
    }
  }

  std::size_t size() const { return y_.size(); }
  bool empty() const { return y_.empty(); }
  int input_dim() const { return dim_; }

  Eigen::Map<const FeatureMatrix> features() const {
    return {x_.data(), static_cast<Eigen::Index>(y_.size()), static_cast<Eigen::Index>(dim_)};
  }
  Eigen::Map<const Eigen::VectorXd> labels() const { return {y_.data(), static_cast<Eigen::Index>(y_.size())}; }

  bool operator==(const TrainBuffer&) const = default;

 private:
  int dim_ = 0;
  std::size_t window_ = 0;
  std::vector<double> x_;
  std::vector<double> y_;
};

struct TrainOutcome {
  ParamVector model;
  double final_loss = 0.0;
  std::size_t steps = 0;
  bool diverged = false;
};

/// Gradient of h at w: grad f(w) + lambda (w - w_global).
inline ParamVector proximal_gradient(const ParamVector& grad_f, const ParamVector& w, const ParamVector& w_global, double lambda) {
  return grad_f + lambda * (w - w_global);
}

/// E epochs of gradient steps on the proximal objective over the buffer.
/// Falls back to w_start if the loss blows past the divergence bound or a
/// parameter becomes non-finite.
inline TrainOutcome local_train(const ModelSpec& spec, LossKind loss, const ParamVector& w_start, const ParamVector& w_global,
                                double lambda, const FeaturesRef& x, const LabelsRef& y, const TrainSettings& settings) {
  if (x.rows() == 0) throw InvalidInput("local_train: empty training buffer");
  if (!(settings.learning_rate > 0.0)) throw InvalidInput("local_train: learning rate must be positive");
  if (w_start.size() != w_global.size()) throw InvalidInput("local_train: start and global model dimensions differ");

  const double eta = settings.learning_rate;
  const Eigen::Index n = x.rows();
  const Eigen::Index chunk = settings.minibatch_size == 0 ? n : std::min<Eigen::Index>(n, static_cast<Eigen::Index>(settings.minibatch_size));

  TrainOutcome out;
  out.model = w_start;
  ParamVector& w = out.model;
  for (int epoch = 0; epoch < settings.local_epochs; ++epoch) {
    for (Eigen::Index begin = 0; begin < n; begin += chunk) {
      const Eigen::Index len = std::min(chunk, n - begin);
      const LossGrad lg = loss_and_gradient(spec, loss, w, x.middleRows(begin, len), y.segment(begin, len));
      out.final_loss = lg.loss;
      if (!std::isfinite(lg.loss) || lg.loss > settings.divergence_loss) {
        out.diverged = true;
        break;
      }
      if (settings.step == ProximalStep::implicit) {
        w = (w - eta * lg.grad + (eta * lambda) * w_global) / (1.0 + eta * lambda);
      } else {
        w -= eta * proximal_gradient(lg.grad, w, w_global, lambda);
      }
      ++out.steps;
      if (!w.allFinite()) {
        out.diverged = true;
        break;
      }
    }
    if (out.diverged) break;
  }
  if (out.diverged) {
    log::warning("local_train: diverged after " + std::to_string(out.steps) + " steps (loss " + std::to_string(out.final_loss) +
                 "); keeping the starting model");
    out.model = w_start;
  }
  return out;
}

inline TrainOutcome local_train(const ModelSpec& spec, LossKind loss, const ParamVector& w_start, const ParamVector& w_global,
                                double lambda, const TrainBuffer& buffer, const TrainSettings& settings) {
  return local_train(spec, loss, w_start, w_global, lambda, buffer.features(), buffer.labels(), settings);
}

struct LocalUpdate {
  int device_id = 0;
  ParamVector trained_model;
  ParamVector base_model;  // the global model training started from
  std::size_t sample_count = 0;
  double round_stamp = 0.0;       // simulated completion time
  std::size_t base_version = 0;   // server aggregation counter when the base model was sent
};

struct DeviceState {
  int device_id = 0;
  ParamVector local_model;
  ParamVector received_global;
  double lambda = 0.0;
  EvalQueue queue;
  StreamSpec stream;
  DriftPlan plan;
  TrainBuffer buffer;
  std::size_t stream_position = 0;  // next round to draw
  double learning_rate = 0.05;
  int local_epochs = 2;
  std::size_t sample_count = 0;
  std::size_t update_count = 0;

  bool exhausted() const { return stream_position >= stream.total_rounds; }
};

enum class RoundStep { draw, evaluate, detect, adapt, push, buffer, train, emit };

struct ClientContext {
  ModelSpec model;
  LossKind loss = LossKind::cross_entropy;
  Metric metric = Metric::error_rate;
  DetectorSettings detector;
  AdaptationPolicy policy;
  std::size_t queue_capacity = 20;
  bool detection_enabled = true;
  bool exclude_drifted_scores = false;
  std::size_t minibatch_size = 0;
  ProximalStep step = ProximalStep::implicit;
  std::function<void(RoundStep)> trace;  // optional instrumentation
};

struct ClientRoundResult {
  LocalUpdate update;
  DriftVerdict verdict;
  EvalScore score;
  std::size_t round_index = 0;
  bool drift_active = false;  // the drawn batch lies inside the injected drift
};

inline DeviceState make_device(int device_id, const StreamSpec& stream, const DriftPlan& plan, const ParamVector& initial_model,
                               const ClientContext& ctx, double learning_rate, int local_epochs, std::size_t buffer_window) {
  DeviceState s;
  s.device_id = device_id;
  s.local_model = initial_model;
  s.received_global = initial_model;
  s.lambda = ctx.policy.lambda_initial;
  s.queue = EvalQueue(ctx.queue_capacity, ctx.metric);
  s.stream = stream;
  s.plan = plan;
  s.buffer = TrainBuffer(stream.input_dim, buffer_window);
  s.learning_rate = learning_rate;
  s.local_epochs = local_epochs;
  return s;
}

/// One device round. Returns nullopt when the stream is exhausted.
inline std::optional<ClientRoundResult> client_round(DeviceState& state, const ParamVector& global_model, const ClientContext& ctx) {
  if (state.exhausted()) return std::nullopt;
  if (global_model.size() != static_cast<Eigen::Index>(ctx.model.parameter_count()))
    throw ProtocolError("client_round: global model has the wrong dimension");
  const auto trace = [&](RoundStep s) {
    if (ctx.trace) ctx.trace(s);
  };

  ClientRoundResult r;
  r.round_index = state.stream_position;
  state.received_global = global_model;

  trace(RoundStep::draw);
  const StreamBatch batch = next_batch(state.stream, state.plan, state.stream_position);
  r.drift_active = drift_started(state.plan, state.stream.total_rounds, state.stream_position);
  ++state.stream_position;

  trace(RoundStep::evaluate);
  r.score = evaluate(ctx.model, global_model, batch, ctx.metric);

  if (ctx.detection_enabled) {
    trace(RoundStep::detect);
    r.verdict = detect(state.queue, r.score, ctx.detector);
    trace(RoundStep::adapt);
    state.lambda = adapt_lambda(state.lambda, r.verdict, ctx.policy);
  }

  if (!(ctx.exclude_drifted_scores && r.verdict.drifted)) {
    trace(RoundStep::push);
    state.queue.push(r.score);
  }

  trace(RoundStep::buffer);
  state.buffer.append(batch);
  state.sample_count += static_cast<std::size_t>(batch.rows());

  trace(RoundStep::train);
  TrainSettings ts;
  ts.learning_rate = state.learning_rate;
  ts.local_epochs = state.local_epochs;
  ts.minibatch_size = ctx.minibatch_size;
  ts.step = ctx.step;
  TrainOutcome trained = local_train(ctx.model, ctx.loss, global_model, global_model, state.lambda, state.buffer, ts);
  state.local_model = trained.model;

  trace(RoundStep::emit);
  r.update.device_id = state.device_id;
  r.update.trained_model = std::move(trained.model);
  r.update.base_model = global_model;
  r.update.sample_count = state.sample_count;
  ++state.update_count;
  return r;
}

}  // namespace fedcond
