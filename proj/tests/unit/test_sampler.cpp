#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "promptkd/errors.hpp"
#include "promptkd/sampler.hpp"
#include "promptkd/tensor.hpp"

using namespace promptkd;

namespace {

std::vector<double> logs(std::initializer_list<double> ps) {
  std::vector<double> out;
  for (double p : ps) out.push_back(p > 0 ? std::log(p) : -INFINITY);
  return out;
}

// Next-token distribution that ignores the context.
class FixedModel final : public AutoregressiveModel {
 public:
  explicit FixedModel(const std::vector<double>& probs) {
    for (double p : probs) lp_.push_back(p > 0 ? std::log(p) : -INFINITY);
  }
  std::size_t vocab_size() const override { return lp_.size(); }
  std::size_t max_length() const override { return 64; }
  std::vector<double> continuation_log_probs(std::span<const int>, std::span<const int> cont) const override {
    std::vector<double> out;
    for (std::size_t i = 0; i <= cont.size(); ++i) out.insert(out.end(), lp_.begin(), lp_.end());
    return out;
  }

 private:
  std::vector<double> lp_;
};

}  // namespace

TEST(Filter, TopPKeepsSmallestPrefixReachingMass) {
  DecodeConfig c;
  c.top_p = 0.7;
  const auto p = filter_distribution(logs({0.5, 0.3, 0.2}), c);
  EXPECT_NEAR(p[0], 0.625, 1e-12);
  EXPECT_NEAR(p[1], 0.375, 1e-12);
  EXPECT_EQ(p[2], 0.0);
}

TEST(Filter, TopKAndTemperature) {
  DecodeConfig c;
  c.top_k = 1;
  const auto p = filter_distribution(logs({0.2, 0.5, 0.3}), c);
  EXPECT_EQ(p, (std::vector<double>{0.0, 1.0, 0.0}));

  c.top_k = 2;
  const auto q = filter_distribution(logs({0.2, 0.5, 0.3}), c);
  EXPECT_NEAR(q[1], 0.625, 1e-12);
  EXPECT_NEAR(q[2], 0.375, 1e-12);

  DecodeConfig t;
  t.temperature = 0.5;  // p^2 renormalised
  const auto r = filter_distribution(logs({0.2, 0.8}), t);
  EXPECT_NEAR(r[0], 0.04 / 0.68, 1e-12);

  DecodeConfig tie;
  tie.top_k = 1;
  EXPECT_EQ(filter_distribution(logs({0.4, 0.4, 0.2}), tie)[0], 1.0);
}

TEST(Filter, Validation) {
  DecodeConfig c;
  c.top_p = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DecodeConfig{};
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DecodeConfig{};
  c.max_new_tokens = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Sampler, SingleStepFrequenciesMatchTarget) {
  const std::vector<double> target{0.1, 0.45, 0.05, 0.4};
  FixedModel m(target);
  DecodeConfig c;
  c.max_new_tokens = 1;
  Rng rng(123);
  std::vector<int> counts(4, 0);
  const std::vector<int> req{1};
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_response(m, req, c, rng, -1)[0])];
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(counts[j] / double(n), target[j], 0.02);
}

TEST(Sampler, TopKOneIsGreedyAndStopsAtEos) {
  FixedModel m({0.1, 0.2, 0.3, 0.4});
  DecodeConfig c;
  c.top_k = 1;
  c.max_new_tokens = 5;
  Rng rng(1);
  const std::vector<int> req{1};
  EXPECT_EQ(sample_response(m, req, c, rng, -1), (std::vector<int>(5, 3)));
  EXPECT_EQ(greedy_decode(m, req, 5, -1), (std::vector<int>(5, 3)));
  EXPECT_EQ(sample_response(m, req, c, rng, 3), (std::vector<int>{3}));
}

TEST(Sampler, LengthLimitAndNoGraph) {
  FixedModel m({0.5, 0.5});
  DecodeConfig c;
  c.max_new_tokens = 64;
  Rng rng(1);
  const std::vector<int> req{1};
  EXPECT_THROW(sample_response(m, req, c, rng), LengthError);

  ModelConfig mc;
  mc.vocab_size = 9;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_layers = 1;
  mc.max_seq_len = 16;
  const auto p = ModelParams::init(mc);
  const auto before = graph_node_count();
  DecodeConfig d;
  d.max_new_tokens = 5;
  const auto a = sample_response(p, nullptr, req, d, 7);
  EXPECT_EQ(graph_node_count(), before);
  EXPECT_EQ(a, sample_response(p, nullptr, req, d, 7));
  EXPECT_LE(a.size(), 5u);
}
