#include "fedcond/drift.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace fedcond;

namespace {

// Independent upper tail: Simpson's rule on the standard normal density
// over [x, x + 40].
double oracle_upper_tail(double x) {
  const int n = 20000;
  const double a = x, b = x + 40.0, h = (b - a) / n;
  const auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); };
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

EvalQueue filled(std::size_t count, double value) {
  EvalQueue q(20);
  for (std::size_t i = 0; i < count; ++i) q.push({value, Metric::error_rate});
  return q;
}

}  // namespace

TEST(Drift, NormalTailAgainstOracle) {
  for (double x : {-3.0, -0.5, 0.0, 0.4449, 1.6449, 3.0, 6.63}) {
    const double want = oracle_upper_tail(x);
    EXPECT_NEAR(normal_upper_tail(x), want, 1e-12 + 1e-9 * want) << x;
    EXPECT_NEAR(normal_cdf(x), 1.0 - want, 1e-12) << x;
  }
}

TEST(Drift, IdenticalScoreNeverFires) {
  const auto v = detect(filled(20, 0.5), {0.5, Metric::error_rate});
  EXPECT_FALSE(v.drifted);
}

TEST(Drift, AbruptJumpFires) {
  const auto v = detect(filled(20, 0.10), {0.60, Metric::error_rate});
  // Hand evaluation with delta = 1/21.
  const double pooled = (20 * 0.10 + 0.60) / 21.0;
  const double gamma = (0.5 - 0.5 / 21.0) / std::sqrt(pooled * (1 - pooled) / 21.0);
  EXPECT_NEAR(v.pooled_mean, 0.12381, 1e-5);
  EXPECT_NEAR(v.statistic, gamma, 1e-12);
  EXPECT_NEAR(v.statistic, 6.63, 0.01);
  EXPECT_NEAR(v.p_value, oracle_upper_tail(gamma), 1e-15);
  EXPECT_NEAR(v.p_value, 1.7e-11, 0.1e-11);
  EXPECT_TRUE(v.drifted);
}

TEST(Drift, SmallShiftDoesNotFire) {
  EvalQueue q(20);
  for (int i = 0; i < 10; ++i) q.push({0.20, Metric::error_rate});
  const auto v = detect(q, {0.30, Metric::error_rate});
  EXPECT_NEAR(v.statistic, 0.445, 0.001);
  EXPECT_NEAR(v.p_value, 0.33, 0.005);
  EXPECT_FALSE(v.drifted);
}

TEST(Drift, ImprovementNeverFires) {
  const auto v = detect(filled(20, 0.60), {0.0, Metric::error_rate});
  EXPECT_LT(v.p_value, 0.05);
  EXPECT_FALSE(v.drifted);
}

TEST(Drift, WarmupAndDegenerate) {
  EXPECT_FALSE(detect(filled(4, 0.0), {1.0, Metric::error_rate}).tested);
  const auto v = detect(filled(20, 0.0), {0.0, Metric::error_rate});
  EXPECT_FALSE(v.tested);
  EXPECT_EQ(v.p_value, 1.0);
}

TEST(Drift, QueueFifo) {
  EvalQueue q(20);
  q.push({0.5, Metric::error_rate});
  EXPECT_EQ(q.size(), 1u);
  for (int i = 1; i <= 25; ++i) q = push(q, {i / 100.0, Metric::error_rate});
  ASSERT_EQ(q.size(), 20u);
  for (int i = 0; i < 20; ++i) EXPECT_DOUBLE_EQ(q.scores()[static_cast<std::size_t>(i)], (i + 6) / 100.0);
}

TEST(Drift, QueueRejectsBadScores) {
  EvalQueue q(20);
  EXPECT_THROW(q.push({NAN, Metric::error_rate}), InvalidInput);
  EXPECT_THROW(q.push({1.5, Metric::error_rate}), InvalidInput);
  EXPECT_THROW(q.push({0.5, Metric::smape}), InvalidInput);
  EXPECT_THROW(EvalQueue(0), InvalidInput);
}

TEST(Drift, AdaptLambda) {
  AdaptationPolicy p{0.1, 2.0, 10.0, std::nullopt, 1.0};
  DriftVerdict fired;
  fired.drifted = true;
  EXPECT_DOUBLE_EQ(adapt_lambda(0.1, fired, p), 0.2);
  EXPECT_DOUBLE_EQ(adapt_lambda(8.0, fired, p), 10.0);
  EXPECT_DOUBLE_EQ(adapt_lambda(0.2, DriftVerdict{}, p), 0.2);
  p.decay_factor = 0.5;
  EXPECT_DOUBLE_EQ(adapt_lambda(8.0, DriftVerdict{}, p), 4.0);
  EXPECT_DOUBLE_EQ(adapt_lambda(0.15, DriftVerdict{}, p), 0.1);
}

TEST(Drift, LambdaStaysInRange) {
  const AdaptationPolicy p{0.1, 3.0, 5.0, std::nullopt, 0.7};
  double lambda = p.lambda_initial;
  DriftVerdict fired;
  fired.drifted = true;
  for (int i = 0; i < 200; ++i) {
    lambda = adapt_lambda(lambda, (i * 7) % 5 < 2 ? fired : DriftVerdict{}, p);
    EXPECT_GE(lambda, p.lambda_initial);
    EXPECT_LE(lambda, p.lambda_max);
  }
}

TEST(Drift, ShrinkingPolicyUsesFloor) {
  const AdaptationPolicy p{0.1, 0.5, 10.0, 0.001, 1.0};
  DriftVerdict fired;
  fired.drifted = true;
  EXPECT_DOUBLE_EQ(adapt_lambda(0.1, fired, p), 0.05);
  EXPECT_DOUBLE_EQ(adapt_lambda(0.0015, fired, p), 0.001);
}

TEST(Drift, MonotoneInNewScore) {
  for (double base : {0.05, 0.2, 0.3, 0.45}) {
    for (std::size_t count : {5u, 12u, 20u}) {
      const EvalQueue q = filled(count, base);
      bool fired = false;
      double last_gamma = -1e300;
      for (int i = 0; i <= 400; ++i) {
        const double s = i / 400.0;
        const auto v = detect(q, {s, Metric::error_rate});
        if (s > base && v.tested && v.pooled_mean < 0.5) {
          EXPECT_GE(v.statistic, last_gamma - 1e-12) << base << " " << count << " " << s;
          last_gamma = v.statistic;
        }
        if (fired) {
          EXPECT_TRUE(v.drifted) << "flip back at " << s;
        }
        fired = fired || v.drifted;
      }
    }
  }
}

TEST(Drift, DeltaModes) {
  EXPECT_DOUBLE_EQ(delta_for(DeltaMode::inverse_total, 20), 1.0 / 21.0);
  EXPECT_DOUBLE_EQ(delta_for(DeltaMode::literal, 20), 1.0 / 20.0 + 1.0);
}
