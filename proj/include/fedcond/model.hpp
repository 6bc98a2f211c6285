#pragma once

// Small differentiable models: linear regression, softmax ("logistic")
// classification and a one-hidden-layer tanh MLP. Parameters are a flat
// vector laid out as row-major weight matrices followed by their biases:
//   linear / logistic : W[out x in], b[out]
//   mlp               : W1[hidden x in], b1[hidden], W2[out x hidden], b2[out]

#include "fedcond/batch.hpp"
#include "fedcond/errors.hpp"
#include "fedcond/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fedcond {

enum class ModelKind { linear_regression, logistic_classification, mlp_1_hidden };
enum class Head { regression, classification };
enum class LossKind { cross_entropy, mean_absolute_error };
// Every metric is oriented so that larger is worse.
enum class Metric { error_rate, smape, one_minus_f1 };

struct ModelSpec {
  ModelKind kind = ModelKind::logistic_classification;
  int input_dim = 1;
  int output_dim = 2;
  int hidden_dim = 0;
  Head head = Head::classification;

  static ModelSpec linear(int input_dim) { return {ModelKind::linear_regression, input_dim, 1, 0, Head::regression}; }
  static ModelSpec logistic(int input_dim, int classes = 2) {
    return {ModelKind::logistic_classification, input_dim, classes, 0, Head::classification};
  }
  static ModelSpec mlp(int input_dim, int hidden_dim, int output_dim, Head head = Head::classification) {
    return {ModelKind::mlp_1_hidden, input_dim, output_dim, hidden_dim, head};
  }

  bool classification() const { return head == Head::classification; }

  std::size_t parameter_count() const {
    const auto in = static_cast<std::size_t>(input_dim);
    const auto out = static_cast<std::size_t>(output_dim);
    const auto hid = static_cast<std::size_t>(hidden_dim);
    if (kind == ModelKind::mlp_1_hidden) return (in * hid + hid) + (hid * out + out);
    return in * out + out;
  }

  void validate() const {
    if (input_dim < 1) throw ConfigError("model: input_dim must be positive");
    if (output_dim < 1) throw ConfigError("model: output_dim must be positive");
    switch (kind) {
      case ModelKind::linear_regression:
        if (head != Head::regression || hidden_dim != 0 || output_dim != 1)
          throw ConfigError("model: linear-regression has one regression output and no hidden layer");
        break;
      case ModelKind::logistic_classification:
        if (head != Head::classification || hidden_dim != 0 || output_dim < 2)
          throw ConfigError("model: logistic-classification needs output_dim >= 2 classes and no hidden layer");
        break;
      case ModelKind::mlp_1_hidden:
        if (hidden_dim < 1) throw ConfigError("model: mlp-1-hidden needs hidden_dim >= 1");
        if (head == Head::classification && output_dim < 2)
          throw ConfigError("model: classification mlp needs output_dim >= 2");
        if (head == Head::regression && output_dim != 1)
          throw ConfigError("model: regression mlp has exactly one output");
        break;
    }
  }

  bool operator==(const ModelSpec&) const = default;
};

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::linear_regression: return "linear-regression";
    case ModelKind::logistic_classification: return "logistic-classification";
    case ModelKind::mlp_1_hidden: return "mlp-1-hidden";
  }
  return "?";
}
inline std::string_view to_string(Head h) { return h == Head::classification ? "classification" : "regression"; }
inline std::string_view to_string(LossKind k) {
  return k == LossKind::cross_entropy ? "cross-entropy" : "mean-absolute-error";
}
inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::error_rate: return "error-rate";
    case Metric::smape: return "smape";
    case Metric::one_minus_f1: return "one-minus-f1";
  }
  return "?";
}

/// Upper end of a metric's range.
constexpr double metric_upper(Metric m) { return m == Metric::smape ? 2.0 : 1.0; }

struct EvalScore {
  double value = 0.0;
  Metric metric = Metric::error_rate;
  bool operator==(const EvalScore&) const = default;
};

inline void check_compatible(const ModelSpec& spec, LossKind loss) {
  if (loss == LossKind::cross_entropy && !spec.classification())
    throw ConfigError("loss: cross-entropy requires a classification model");
  if (loss == LossKind::mean_absolute_error && spec.classification())
    throw ConfigError("loss: mean-absolute-error requires a regression model");
}

inline void check_compatible(const ModelSpec& spec, Metric metric) {
  if (metric == Metric::smape && spec.classification()) throw ConfigError("metric: smape requires a regression model");
  if (metric != Metric::smape && !spec.classification())
    throw ConfigError("metric: " + std::string(to_string(metric)) + " requires a classification model");
}

/// Zero weights for linear/logistic; small uniform weights for the MLP
/// (zero would leave the hidden units symmetric).
inline ParamVector initial_parameters(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector w = ParamVector::Zero(static_cast<Eigen::Index>(spec.parameter_count()));
  if (spec.kind == ModelKind::mlp_1_hidden) {
    Rng rng(seed, {tag(Channel::init)});
    const double scale_in = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
    const double scale_hidden = 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim));
    const Eigen::Index w1 = static_cast<Eigen::Index>(spec.hidden_dim) * spec.input_dim;
    const Eigen::Index b1 = spec.hidden_dim;
    const Eigen::Index w2 = static_cast<Eigen::Index>(spec.output_dim) * spec.hidden_dim;
    for (Eigen::Index i = 0; i < w1; ++i) w[i] = rng.uniform(-scale_in, scale_in);
    for (Eigen::Index i = 0; i < w2; ++i) w[w1 + b1 + i] = rng.uniform(-scale_hidden, scale_hidden);
  }
  return w;
}

namespace detail {

using ConstRowMap = Eigen::Map<const FeatureMatrix>;
using RowMap = Eigen::Map<FeatureMatrix>;

struct Layout {
  Eigen::Index w1 = 0, b1 = 0, w2 = 0, b2 = 0;  // offsets
};

inline Layout layout(const ModelSpec& spec) {
  Layout l;
  if (spec.kind == ModelKind::mlp_1_hidden) {
    l.b1 = static_cast<Eigen::Index>(spec.hidden_dim) * spec.input_dim;
    l.w2 = l.b1 + spec.hidden_dim;
    l.b2 = l.w2 + static_cast<Eigen::Index>(spec.output_dim) * spec.hidden_dim;
  } else {
    l.b1 = static_cast<Eigen::Index>(spec.output_dim) * spec.input_dim;
  }
  return l;
}

inline void check_shapes(const ModelSpec& spec, const ParamVector& w, const FeaturesRef& x) {
  if (static_cast<std::size_t>(w.size()) != spec.parameter_count())
    throw ConfigError("model: parameter vector has " + std::to_string(w.size()) + " entries, model needs " +
                      std::to_string(spec.parameter_count()));
  if (x.cols() != spec.input_dim)
    throw ConfigError("model: feature matrix has " + std::to_string(x.cols()) + " columns, model needs " +
                      std::to_string(spec.input_dim));
}

inline void softmax_rows(FeatureMatrix& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - m).exp();
    z.row(i) /= z.row(i).sum();
  }
}

// Forward pass. Returns pre-activation outputs; `hidden` receives tanh
// activations for the MLP.
inline FeatureMatrix forward(const ModelSpec& spec, const ParamVector& w, const FeaturesRef& x, FeatureMatrix* hidden) {
  const Layout l = layout(spec);
  if (spec.kind == ModelKind::mlp_1_hidden) {
    ConstRowMap w1(w.data(), spec.hidden_dim, spec.input_dim);
    Eigen::Map<const Eigen::RowVectorXd> b1(w.data() + l.b1, spec.hidden_dim);
    ConstRowMap w2(w.data() + l.w2, spec.output_dim, spec.hidden_dim);
    Eigen::Map<const Eigen::RowVectorXd> b2(w.data() + l.b2, spec.output_dim);
    FeatureMatrix h = ((x * w1.transpose()).rowwise() + b1).array().tanh().matrix();
    FeatureMatrix z = (h * w2.transpose()).rowwise() + b2;
    if (hidden) *hidden = std::move(h);
    return z;
  }
  ConstRowMap wm(w.data(), spec.output_dim, spec.input_dim);
  Eigen::Map<const Eigen::RowVectorXd> b(w.data() + l.b1, spec.output_dim);
  return (x * wm.transpose()).rowwise() + b;
}

inline std::size_t class_index(double label, int classes) {
  const double r = std::round(label);
  if (r != label || r < 0 || r >= classes)
    throw InvalidInput("label " + std::to_string(label) + " is not a class index in [0, " + std::to_string(classes) + ")");
  return static_cast<std::size_t>(r);
}

inline Eigen::Index argmax_row(const FeatureMatrix& p, Eigen::Index i) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < p.cols(); ++j)
    if (p(i, j) > p(i, best)) best = j;
  return best;
}

}  // namespace detail

/// Class probabilities (classification) or real predictions (regression),
/// one row per sample.
inline FeatureMatrix predict(const ModelSpec& spec, const ParamVector& w, const FeaturesRef& x) {
  detail::check_shapes(spec, w, x);
  FeatureMatrix z = detail::forward(spec, w, x, nullptr);
  if (spec.classification()) detail::softmax_rows(z);
  return z;
}

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Mean per-sample loss and its gradient with respect to the flat parameters.
inline LossGrad loss_and_gradient(const ModelSpec& spec, LossKind loss, const ParamVector& w, const FeaturesRef& x,
                                  const LabelsRef& y) {
  detail::check_shapes(spec, w, x);
  check_compatible(spec, loss);
  const Eigen::Index n = x.rows();
  if (n == 0) throw InvalidInput("loss_and_gradient: empty batch");
  if (y.size() != n) throw InvalidInput("loss_and_gradient: label count does not match row count");

  FeatureMatrix hidden;
  FeatureMatrix z = detail::forward(spec, w, x, spec.kind == ModelKind::mlp_1_hidden ? &hidden : nullptr);
  const double inv_n = 1.0 / static_cast<double>(n);

  // dL/dz, one row per sample.
  FeatureMatrix dz(n, spec.output_dim);
  double total = 0.0;
  if (loss == LossKind::cross_entropy) {
    // -log softmax via log-sum-exp: exact and finite for any logits.
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(detail::class_index(y[i], spec.output_dim));
      const double m = z.row(i).maxCoeff();
      const double lse = m + std::log((z.row(i).array() - m).exp().sum());
      total += lse - z(i, c);
      dz.row(i) = ((z.row(i).array() - lse).exp() * inv_n).matrix();
      dz(i, c) -= inv_n;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = z(i, 0) - y[i];
      total += std::abs(r);
      dz(i, 0) = (r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0)) * inv_n;
    }
  }

  LossGrad out;
  out.loss = total * inv_n;
  out.grad = ParamVector::Zero(w.size());
  const detail::Layout l = detail::layout(spec);
  if (spec.kind == ModelKind::mlp_1_hidden) {
    detail::ConstRowMap w2(w.data() + l.w2, spec.output_dim, spec.hidden_dim);
    detail::RowMap(out.grad.data() + l.w2, spec.output_dim, spec.hidden_dim) = dz.transpose() * hidden;
    out.grad.segment(l.b2, spec.output_dim) = dz.colwise().sum().transpose();
    FeatureMatrix da = ((dz * w2).array() * (1.0 - hidden.array().square())).matrix();
    detail::RowMap(out.grad.data(), spec.hidden_dim, spec.input_dim) = da.transpose() * x;
    out.grad.segment(l.b1, spec.hidden_dim) = da.colwise().sum().transpose();
  } else {
    detail::RowMap(out.grad.data(), spec.output_dim, spec.input_dim) = dz.transpose() * x;
    out.grad.segment(l.b1, spec.output_dim) = dz.colwise().sum().transpose();
  }
  return out;
}

inline LossGrad loss_and_gradient(const ModelSpec& spec, LossKind loss, const ParamVector& w, const StreamBatch& batch) {
  return loss_and_gradient(spec, loss, w, batch.features, batch.labels);
}

/// Macro-averaged F1 over the classes that occur in the labels or the
/// predictions.
inline double macro_f1(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred, int classes) {
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pred[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++present;
  }
  return present == 0 ? 1.0 : sum / present;
}

inline double smape_term(double pred, double truth) {
  const double denom = std::abs(pred) + std::abs(truth);
  return denom == 0.0 ? 0.0 : 2.0 * std::abs(pred - truth) / denom;
}

inline EvalScore evaluate(const ModelSpec& spec, const ParamVector& w, const FeaturesRef& x, const LabelsRef& y,
                          Metric metric) {
  check_compatible(spec, metric);
  if (x.rows() == 0) throw InvalidInput("evaluate: empty batch");
  if (y.size() != x.rows()) throw InvalidInput("evaluate: label count does not match row count");
  const FeatureMatrix p = predict(spec, w, x);
  const Eigen::Index n = x.rows();

  if (metric == Metric::smape) {
    // Sorted summation keeps the result independent of row order.
    std::vector<double> terms(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) terms[static_cast<std::size_t>(i)] = smape_term(p(i, 0), y[i]);
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return {s / static_cast<double>(n), metric};
  }

  std::vector<std::size_t> truth(static_cast<std::size_t>(n)), pred(static_cast<std::size_t>(n));
  std::size_t wrong = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    truth[k] = detail::class_index(y[i], spec.output_dim);
    pred[k] = static_cast<std::size_t>(detail::argmax_row(p, i));
    if (truth[k] != pred[k]) ++wrong;
  }
  if (metric == Metric::error_rate) return {static_cast<double>(wrong) / static_cast<double>(n), metric};
  return {1.0 - macro_f1(truth, pred, spec.output_dim), metric};
}

inline EvalScore evaluate(const ModelSpec& spec, const ParamVector& w, const StreamBatch& batch, Metric metric) {
  return evaluate(spec, w, batch.features, batch.labels, metric);
}

}  // namespace fedcond
