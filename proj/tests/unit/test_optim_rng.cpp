#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "promptkd/errors.hpp"
#include "promptkd/ops.hpp"
#include "promptkd/optim.hpp"
#include "promptkd/rng.hpp"

using namespace promptkd;

TEST(AdamW, MatchesRecurrenceOracleOnQuadratic) {
  // f(x) = 0.5 * (3 x0^2 + x1^2), gradient (3 x0, x1).
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.01;
  Tensor x = Tensor::from({2}, {1.5, -2.0}, true);
  AdamW opt({x}, cfg);

  double p[2] = {1.5, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  const double curv[2] = {3.0, 1.0};
  for (int t = 1; t <= 100; ++t) {
    opt.zero_grad();
    sum(mul(mul(x, x), Tensor::from({2}, {1.5, 0.5}))).backward();
    opt.step();
    for (int i = 0; i < 2; ++i) {
      const double g = curv[i] * p[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      p[i] = p[i] - cfg.lr * cfg.weight_decay * p[i];
      p[i] = p[i] - cfg.lr * mh / (std::sqrt(vh) + 1e-8);
    }
    ASSERT_NEAR(x.values()[0], p[0], 1e-10) << "step " << t;
    ASSERT_NEAR(x.values()[1], p[1], 1e-10) << "step " << t;
  }
  EXPECT_LT(std::abs(x.values()[0]), 0.5);
  EXPECT_EQ(opt.states()[0].step, 100);
}

TEST(AdamW, SkipsParametersWithoutGradient) {
  Tensor a = Tensor::from({1}, {1.0}, true), b = Tensor::from({1}, {1.0}, true);
  AdamW opt({a, b}, AdamWConfig{});
  sum(a).backward();
  opt.step();
  EXPECT_NE(a.values()[0], 1.0);
  EXPECT_EQ(b.values()[0], 1.0);
  EXPECT_EQ(opt.states()[1].step, 0);
}

TEST(AdamW, RejectsNonPositiveLearningRate) {
  AdamWConfig cfg;
  cfg.lr = 0.0;
  EXPECT_THROW(AdamW({Tensor::zeros({1}, true)}, cfg), ConfigError);
}

TEST(Rng, DeterministicAndStateRoundTrip) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  a.normal();
  const auto s = a.state();
  Rng c;
  c.set_state(s);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), c.normal());
}

TEST(Rng, DistributionsInRangeWithExpectedMoments) {
  Rng r(7);
  const int n = 200000;
  double s = 0, s2 = 0, u = 0;
  std::set<std::uint64_t> seen;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
    const double x = r.uniform01();
    ASSERT_GE(x, 0.0);
    ASSERT_LT(x, 1.0);
    u += x;
    const auto k = r.uniform_index(7);
    ASSERT_LT(k, 7u);
    seen.insert(k);
    const auto j = r.uniform_int(-2, 2);
    ASSERT_GE(j, -2);
    ASSERT_LE(j, 2);
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  EXPECT_NEAR(u / n, 0.5, 0.005);
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, StreamSeedsAreDistinct) {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 10; ++s)
    for (std::uint64_t i = 0; i < 100; ++i) seeds.insert(stream_seed(s, i));
  EXPECT_EQ(seeds.size(), 1000u);
}
