#include "fedcond/model.hpp"
#include "fedcond/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace fedcond;

namespace {

struct Instance {
  FeatureMatrix x;
  Eigen::VectorXd y;
  ParamVector w;
};

Instance random_instance(const ModelSpec& spec, std::uint64_t seed, int rows = 7) {
  Rng rng(seed, {42});
  Instance in;
  in.x.resize(rows, spec.input_dim);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < spec.input_dim; ++j) in.x(i, j) = rng.uniform(-1.5, 1.5);
  in.y.resize(rows);
  for (int i = 0; i < rows; ++i)
    in.y[i] = spec.classification() ? static_cast<double>(rng.index(static_cast<std::uint64_t>(spec.output_dim))) : rng.uniform(-2, 2);
  in.w.resize(static_cast<Eigen::Index>(spec.parameter_count()));
  for (Eigen::Index i = 0; i < in.w.size(); ++i) in.w[i] = rng.uniform(-0.8, 0.8);
  return in;
}

// Central differences on the loss alone, step 1e-5.
ParamVector numeric_gradient(const ModelSpec& spec, LossKind loss, const Instance& in) {
  ParamVector g(in.w.size());
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < in.w.size(); ++i) {
    ParamVector up = in.w, down = in.w;
    up[i] += h;
    down[i] -= h;
    g[i] = (loss_and_gradient(spec, loss, up, in.x, in.y).loss - loss_and_gradient(spec, loss, down, in.x, in.y).loss) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(Model, ZeroLinearPredictsZero) {
  const auto spec = ModelSpec::linear(4);
  const ParamVector w = ParamVector::Zero(5);
  FeatureMatrix x = FeatureMatrix::Random(6, 4);
  EXPECT_TRUE(predict(spec, w, x).isZero());
}

TEST(Model, ZeroLogisticIsHalf) {
  const auto spec = ModelSpec::logistic(3);
  FeatureMatrix x = FeatureMatrix::Random(5, 3);
  const FeatureMatrix p = predict(spec, ParamVector::Zero(8), x);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_DOUBLE_EQ(p(i, 1), 0.5);
}

TEST(Model, MlpRowsSumToOne) {
  const auto spec = ModelSpec::mlp(4, 6, 3);
  const Instance in = random_instance(spec, 3);
  const FeatureMatrix p = predict(spec, in.w, in.x);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
}

TEST(Model, PredictIsPure) {
  const auto spec = ModelSpec::mlp(4, 6, 3);
  const Instance in = random_instance(spec, 9);
  EXPECT_EQ(predict(spec, in.w, in.x), predict(spec, in.w, in.x));
}

TEST(Model, MaeAtZeroIsZero) {
  const auto spec = ModelSpec::linear(3);
  FeatureMatrix x = FeatureMatrix::Random(4, 3);
  const auto lg = loss_and_gradient(spec, LossKind::mean_absolute_error, ParamVector::Zero(4), x, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(lg.loss, 0.0);
  EXPECT_TRUE(lg.grad.isZero());
}

TEST(Model, BalancedCrossEntropyIsLn2) {
  const auto spec = ModelSpec::logistic(2);
  FeatureMatrix x(4, 2);
  x << 1, 2, -1, 0.5, 3, -3, 0, 1;
  Eigen::VectorXd y(4);
  y << 0, 1, 0, 1;
  EXPECT_NEAR(loss_and_gradient(spec, LossKind::cross_entropy, ParamVector::Zero(6), x, y).loss, std::log(2.0), 1e-12);
}

TEST(Model, ConfidentMispredictionStaysFinite) {
  const auto spec = ModelSpec::logistic(1);
  FeatureMatrix x(1, 1);
  x << 1.0;
  Eigen::VectorXd y(1);
  y << 0;
  ParamVector w(4);
  w << -500, 500, 0, 0;  // class 1 by a margin of 1000
  const auto lg = loss_and_gradient(spec, LossKind::cross_entropy, w, x, y);
  EXPECT_TRUE(std::isfinite(lg.loss));
  EXPECT_NEAR(lg.loss, 1000.0, 1e-9);
  EXPECT_TRUE(lg.grad.allFinite());
  EXPECT_GT(lg.grad.norm(), 0.5);
}

class GradientOracle : public ::testing::TestWithParam<std::pair<ModelSpec, LossKind>> {};

TEST_P(GradientOracle, MatchesCentralDifferences) {
  const auto [spec, loss] = GetParam();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Instance in = random_instance(spec, seed);
    const ParamVector analytic = loss_and_gradient(spec, loss, in.w, in.x, in.y).grad;
    const ParamVector numeric = numeric_gradient(spec, loss, in);
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-3});
      EXPECT_LE(std::abs(analytic[i] - numeric[i]) / scale, 1e-5) << "seed " << seed << " component " << i;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllPairs, GradientOracle,
                         ::testing::Values(std::make_pair(ModelSpec::logistic(4), LossKind::cross_entropy),
                                           std::make_pair(ModelSpec::logistic(3, 4), LossKind::cross_entropy),
                                           std::make_pair(ModelSpec::linear(5), LossKind::mean_absolute_error),
                                           std::make_pair(ModelSpec::mlp(4, 5, 3), LossKind::cross_entropy),
                                           std::make_pair(ModelSpec::mlp(3, 4, 1, Head::regression), LossKind::mean_absolute_error)));

TEST(Model, EvaluatePerfectAndAllWrong) {
  const auto spec = ModelSpec::logistic(1);
  FeatureMatrix x(4, 1);
  x << -2, -1, 1, 2;
  ParamVector w(4);
  w << -3, 3, 0, 0;
  Eigen::VectorXd right(4), wrong(4);
  right << 0, 0, 1, 1;
  wrong << 1, 1, 0, 0;
  EXPECT_EQ(evaluate(spec, w, x, right, Metric::error_rate).value, 0.0);
  EXPECT_EQ(evaluate(spec, w, x, wrong, Metric::error_rate).value, 1.0);
  EXPECT_EQ(evaluate(spec, w, x, right, Metric::one_minus_f1).value, 0.0);
}

TEST(Model, SmapeConventions) {
  EXPECT_EQ(smape_term(2.0, 2.0), 0.0);
  EXPECT_EQ(smape_term(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(smape_term(1.0, 3.0), 2.0 * 2.0 / 4.0);
  // Through evaluate: w = 0 predicts 0 against y = 0 everywhere.
  const auto spec = ModelSpec::linear(2);
  FeatureMatrix x = FeatureMatrix::Random(3, 2);
  EXPECT_EQ(evaluate(spec, ParamVector::Zero(3), x, Eigen::VectorXd::Zero(3), Metric::smape).value, 0.0);
}

TEST(Model, MacroF1ByHand) {
  // class 0: tp 1, fp 1, fn 1 -> f1 0.5; class 1: tp 1, fp 1, fn 1 -> 0.5
  EXPECT_DOUBLE_EQ(macro_f1({0, 0, 1, 1}, {0, 1, 1, 0}, 2), 0.5);
}

TEST(Model, EvaluateIsPermutationInvariant) {
  const auto spec = ModelSpec::mlp(3, 4, 1, Head::regression);
  Instance in = random_instance(spec, 5, 11);
  const double a = evaluate(spec, in.w, in.x, in.y, Metric::smape).value;
  std::vector<int> perm(11);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::rotate(perm.begin(), perm.begin() + 3, perm.end());
  FeatureMatrix px(11, 3);
  Eigen::VectorXd py(11);
  for (int i = 0; i < 11; ++i) {
    px.row(i) = in.x.row(perm[static_cast<std::size_t>(i)]);
    py[i] = in.y[perm[static_cast<std::size_t>(i)]];
  }
  EXPECT_EQ(a, evaluate(spec, in.w, px, py, Metric::smape).value);
}

TEST(Model, LossIsNonNegative) {
  for (const auto& [spec, loss] : {std::make_pair(ModelSpec::logistic(3), LossKind::cross_entropy),
                                   std::make_pair(ModelSpec::linear(3), LossKind::mean_absolute_error)}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Instance in = random_instance(spec, s);
      EXPECT_GE(loss_and_gradient(spec, loss, in.w, in.x, in.y).loss, 0.0);
    }
  }
}

TEST(Model, MismatchedShapesThrow) {
  const auto spec = ModelSpec::logistic(3);
  FeatureMatrix x = FeatureMatrix::Random(2, 4);
  EXPECT_THROW(predict(spec, ParamVector::Zero(8), x), ConfigError);
  FeatureMatrix ok = FeatureMatrix::Random(2, 3);
  EXPECT_THROW(predict(spec, ParamVector::Zero(7), ok), ConfigError);
  EXPECT_THROW(check_compatible(ModelSpec::linear(2), LossKind::cross_entropy), ConfigError);
}

TEST(Model, ParameterCounts) {
  EXPECT_EQ(ModelSpec::linear(10).parameter_count(), 11u);
  EXPECT_EQ(ModelSpec::mlp(10, 16, 2).parameter_count(), 210u);
}
