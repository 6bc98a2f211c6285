#include "fedcond/server.hpp"

#include <gtest/gtest.h>

#include <limits>
#include <vector>

using namespace fedcond;

namespace {

LocalUpdate make_update(int device, ParamVector base, ParamVector trained, std::size_t n) {
  LocalUpdate u;
  u.device_id = device;
  u.base_model = std::move(base);
  u.trained_model = std::move(trained);
  u.sample_count = n;
  return u;
}

ParamVector vec(std::initializer_list<double> v) {
  ParamVector p(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) p[i++] = x;
  return p;
}

std::vector<int> ids(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

}  // namespace

TEST(Server, HandEvaluatedFixture) {
  ServerSettings st;
  st.fixed_total_samples = 200;
  st.model_bytes = 8;
  ServerState s = make_server(vec({1.0, 2.0}), 2, st);
  const auto r = aggregate(s, make_update(1, vec({1.0, 2.0}), vec({0.8, 2.2}), 50));
  ASSERT_TRUE(r);
  EXPECT_NEAR(r->new_global[0], 0.95, 1e-12);
  EXPECT_NEAR(r->new_global[1], 2.05, 1e-12);
  EXPECT_DOUBLE_EQ(r->applied_weight, 0.25);
  EXPECT_EQ(s.ledger[1], 1u);
  EXPECT_EQ(s.round_counter, 1u);
  EXPECT_EQ(s.uplink_bytes, 8u);
}

TEST(Server, ZeroDeltaIsNoOp) {
  ServerState s = make_server(vec({0.3, -0.7}), 3, {});
  const auto r = aggregate(s, make_update(0, vec({5, 5}), vec({5, 5}), 10));
  EXPECT_EQ(r->new_global, vec({0.3, -0.7}));
}

TEST(Server, ReplayMatchesIndependentRecurrence) {
  const int K = 7, dim = 5;
  ServerState s = make_server(ParamVector::Zero(dim), K, {});
  Rng rng(99, {2});
  std::vector<double> w(dim, 0.0);
  std::vector<double> latest(K, 0.0);
  for (int t = 0; t < 100; ++t) {
    const int k = static_cast<int>(rng.index(K));
    const std::size_t n = 1 + rng.index(500);
    ParamVector base(dim), trained(dim);
    for (int i = 0; i < dim; ++i) {
      base[i] = rng.uniform(-2, 2);
      trained[i] = rng.uniform(-2, 2);
    }
    latest[static_cast<std::size_t>(k)] = static_cast<double>(n);
    double total = 0;
    for (double v : latest) total += v;
    const double weight = static_cast<double>(n) / total;
    for (int i = 0; i < dim; ++i) w[static_cast<std::size_t>(i)] -= weight * (base[i] - trained[i]);
    aggregate(s, make_update(k, base, trained, n));
  }
  for (int i = 0; i < dim; ++i) EXPECT_NEAR(s.global_model[i], w[static_cast<std::size_t>(i)], 1e-9);
  EXPECT_EQ(s.round_counter, 100u);
}

TEST(Server, TotalSamplesNonDecreasingForGrowingStreams) {
  ServerState s = make_server(ParamVector::Zero(1), 3, {});
  std::size_t last = 0;
  std::vector<std::size_t> n(3, 0);
  for (int t = 0; t < 30; ++t) {
    const int k = t % 3;
    n[static_cast<std::size_t>(k)] += 10;
    aggregate(s, make_update(k, vec({0}), vec({1}), n[static_cast<std::size_t>(k)]));
    EXPECT_GE(s.total_samples, last);
    last = s.total_samples;
  }
}

TEST(Server, NonFiniteUpdateRejected) {
  ServerState s = make_server(vec({1, 1}), 2, {});
  s.active_count = 0;
  const auto before = s.global_model;
  const auto r = aggregate(s, make_update(0, vec({1, 1}), vec({std::numeric_limits<double>::quiet_NaN(), 1}), 5));
  EXPECT_FALSE(r);
  EXPECT_EQ(s.global_model, before);
  EXPECT_EQ(s.ledger[0], 0u);
  EXPECT_EQ(s.round_counter, 0u);
}

TEST(Server, DimensionMismatchThrows) {
  ServerState s = make_server(vec({1, 1}), 2, {});
  EXPECT_THROW(aggregate(s, make_update(0, vec({1}), vec({1}), 5)), ProtocolError);
}

TEST(Server, SelectsFewestUpdates) {
  ServerSettings st;
  st.gamma = 1.0;
  st.max_update_lead = -1;
  ServerState s = make_server(ParamVector::Zero(1), 3, st);
  s.ledger = {3, 1, 2};
  const auto all = ids(3);
  EXPECT_EQ(select_next_device(s, all), 1);
}

TEST(Server, TieBreaksOnLowestId) {
  ServerSettings st;
  st.gamma = 1.0;
  ServerState s = make_server(ParamVector::Zero(1), 2, st);
  s.ledger = {2, 2};
  const auto all = ids(2);
  EXPECT_EQ(select_next_device(s, all), 0);
}

TEST(Server, FullActiveSetSelectsNothing) {
  ServerSettings st;
  st.gamma = 0.2;
  st.model_bytes = 4;
  ServerState s = make_server(ParamVector::Zero(1), 10, st);
  const auto all = ids(10);
  EXPECT_EQ(init_dispatch(s, all).size(), 2u);
  EXPECT_FALSE(select_next_device(s, all));
  EXPECT_EQ(s.downlink_bytes, 8u);
  release(s, 0);
  EXPECT_EQ(select_next_device(s, all), 0);
}

TEST(Server, InitDispatchSizes) {
  const auto all = ids(20);
  for (auto [gamma, want] : {std::pair{0.2, 4u}, {1.0, 20u}, {0.05, 1u}}) {
    ServerSettings st;
    st.gamma = gamma;
    st.model_bytes = 44;
    ServerState s = make_server(ParamVector::Zero(1), 20, st);
    const auto chosen = init_dispatch(s, all);
    ASSERT_EQ(chosen.size(), want);
    for (std::size_t i = 0; i < chosen.size(); ++i) EXPECT_EQ(chosen[i], static_cast<int>(i));
    EXPECT_EQ(s.downlink_bytes, want * 44u);
  }
}

TEST(Server, BadGammaIsConfigError) {
  ServerSettings st;
  st.gamma = 0.0;
  EXPECT_THROW(make_server(ParamVector::Zero(1), 5, st), ConfigError);
  st.gamma = 1.5;
  EXPECT_THROW(make_server(ParamVector::Zero(1), 5, st), ConfigError);
}

TEST(Server, LeadBoundHoldsBackFastDevices) {
  ServerSettings st;
  st.gamma = 1.0;
  st.max_update_lead = 1;
  ServerState s = make_server(ParamVector::Zero(1), 2, st);
  s.ledger = {0, 2};
  s.active = {1, 0};
  s.active_count = 1;
  const std::vector<int> idle{1};
  EXPECT_FALSE(select_next_device(s, idle));
  s.retired[0] = 1;
  EXPECT_EQ(select_next_device(s, idle), 1);
}

TEST(Server, ModelBytes) {
  EXPECT_EQ(model_bytes(ModelSpec::linear(10)), 44u);
  EXPECT_EQ(model_bytes(ModelSpec::linear(10), 8), 88u);
  EXPECT_EQ(model_bytes(ModelSpec::mlp(10, 16, 2)), 840u);
}

TEST(Server, BroadcastCountsEveryDevice) {
  ServerSettings st;
  st.model_bytes = 10;
  ServerState s = make_server(ParamVector::Zero(1), 20, st);
  broadcast(s);
  EXPECT_EQ(s.downlink_bytes, 200u);
  EXPECT_EQ(s.dispatches, 20u);
}
