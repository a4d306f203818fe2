#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <array>
#include <functional>

#include "promptkd/errors.hpp"
#include "promptkd/eval.hpp"
#include "promptkd/rng.hpp"

using namespace promptkd;

namespace {

std::vector<std::string> words(std::initializer_list<const char*> ws) { return {ws.begin(), ws.end()}; }

// Top-down memoised recursion over suffixes, independent of the two-row
// table in the library.
std::size_t brute_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<int>> memo(a.size() + 1, std::vector<int>(b.size() + 1, -1));
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == a.size() || j == b.size()) return 0;
    int& m = memo[i][j];
    if (m >= 0) return m;
    m = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    return m;
  };
  return static_cast<std::size_t>(go(0, 0));
}

std::vector<std::string> random_words(Rng& rng, std::size_t max_len) {
  std::vector<std::string> out(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_len))));
  for (auto& w : out) w = std::string(1, static_cast<char>('a' + rng.uniform_index(4)));
  return out;
}

// Two-token model whose next-token distribution depends only on the last
// token (the request's last token for the first step).
class MarkovModel final : public AutoregressiveModel {
 public:
  // table[prev][next]
  explicit MarkovModel(std::array<std::array<double, 2>, 2> table) : table_(table) {}
  std::size_t vocab_size() const override { return 2; }
  std::size_t max_length() const override { return 64; }
  std::vector<double> continuation_log_probs(std::span<const int> request,
                                             std::span<const int> cont) const override {
    std::vector<double> out;
    int prev = request.back();
    for (std::size_t t = 0; t <= cont.size(); ++t) {
      for (int v = 0; v < 2; ++v) out.push_back(std::log(table_[prev][v]));
      if (t < cont.size()) prev = cont[t];
    }
    return out;
  }
  double prob(int prev, int next) const { return table_[prev][next]; }

 private:
  std::array<std::array<double, 2>, 2> table_;
};

double kl_after(const MarkovModel& p, const MarkovModel& q, int prev) {
  double kl = 0.0;
  for (int v = 0; v < 2; ++v) kl += p.prob(prev, v) * std::log(p.prob(prev, v) / q.prob(prev, v));
  return kl;
}

// Accumulated KL(p || q) at steps 1..L with prefixes drawn from gen, by
// summing over all 2^(l-1) prefixes.
std::vector<double> enumerate(const MarkovModel& p, const MarkovModel& q, const MarkovModel& gen,
                              int first, std::size_t L) {
  std::vector<double> per_step(L, 0.0);
  std::function<void(int, std::size_t, double)> walk = [&](int prev, std::size_t t, double w) {
    per_step[t] += w * kl_after(p, q, prev);
    if (t + 1 == L) return;
    for (int v = 0; v < 2; ++v) walk(v, t + 1, w * gen.prob(prev, v));
  };
  walk(first, 0, 1.0);
  std::vector<double> acc(L);
  double s = 0.0;
  for (std::size_t l = 0; l < L; ++l) acc[l] = (s += per_step[l]);
  return acc;
}

const MarkovModel kTeacher({{{0.8, 0.2}, {0.3, 0.7}}});
const MarkovModel kStudent({{{0.4, 0.6}, {0.6, 0.4}}});

}  // namespace

TEST(Rouge, WorkedExample) {
  const auto s = rouge_l(words({"a", "b", "c", "d"}), words({"a", "c", "d", "e"}));
  EXPECT_DOUBLE_EQ(s.precision, 0.75);
  EXPECT_DOUBLE_EQ(s.recall, 0.75);
  EXPECT_DOUBLE_EQ(s.f_measure, 0.75);
}

TEST(Rouge, EdgeCases) {
  const auto same = rouge_l_text("x y z", " x  y\nz ");
  EXPECT_EQ(same.f_measure, 1.0);
  const auto none = rouge_l_text("p q", "x y");
  EXPECT_EQ(none.precision + none.recall + none.f_measure, 0.0);
  EXPECT_EQ(rouge_l_text("", "x").f_measure, 0.0);
  EXPECT_THROW(rouge_l_text("x", "  "), ContractError);
}

TEST(Rouge, LcsMatchesBruteForceOnRandomPairs) {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_words(rng, 20);
    const auto b = random_words(rng, 20);
    ASSERT_EQ(lcs_length(a, b), brute_lcs(a, b)) << i;
    if (b.empty()) continue;
    const auto s = rouge_l(a, b);
    if (a.empty()) continue;
    const double lcs = static_cast<double>(brute_lcs(a, b));
    EXPECT_EQ(s.precision, lcs / static_cast<double>(a.size()));
    EXPECT_EQ(s.recall, lcs / static_cast<double>(b.size()));
  }
}

TEST(Rouge, SwappingArgumentsSwapsPrecisionAndRecall) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    auto a = random_words(rng, 15), b = random_words(rng, 15);
    a.push_back("z");
    b.push_back("y");
    const auto ab = rouge_l(a, b), ba = rouge_l(b, a);
    EXPECT_EQ(ab.precision, ba.recall);
    EXPECT_EQ(ab.recall, ba.precision);
    EXPECT_DOUBLE_EQ(ab.f_measure, ba.f_measure);
    for (double v : {ab.precision, ab.recall, ab.f_measure}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(ExAccErr, GuardedRatio) {
  bool ok = false;
  EXPECT_DOUBLE_EQ(exaccerr_value(1.5, 1.0, 1e-8, &ok), 50.0);
  EXPECT_TRUE(ok);
  EXPECT_EQ(exaccerr_value(1e-10, 1e-10, 1e-8, &ok), 0.0);
  EXPECT_TRUE(ok);
  EXPECT_TRUE(std::isnan(exaccerr_value(0.5, 0.0, 1e-8, &ok)));
  EXPECT_FALSE(ok);
}

TEST(ExAccErr, IdenticalModelsGiveZero) {
  const std::vector<std::vector<int>> reqs{{0}, {1}};
  ExposureBiasConfig cfg;
  cfg.max_steps = 6;
  cfg.n_samples = 3;
  cfg.eos_id = -1;
  const auto rep = exaccerr(kTeacher, kTeacher, reqs, cfg);
  for (std::size_t l = 0; l < 6; ++l) {
    EXPECT_NEAR(rep.r[l], 0.0, 1e-15);
    EXPECT_EQ(rep.exaccerr[l], 0.0);
    EXPECT_TRUE(rep.defined[l]);
  }
}

TEST(ExAccErr, FirstStepHasNoExposureBias) {
  const std::vector<std::vector<int>> reqs{{0}, {1}};
  ExposureBiasConfig cfg;
  cfg.max_steps = 5;
  cfg.n_samples = 4;
  cfg.eos_id = -1;
  const auto rep = exaccerr(kTeacher, kStudent, reqs, cfg);
  EXPECT_EQ(rep.r[0], rep.e[0]);
  EXPECT_EQ(rep.exaccerr[0], 0.0);
}

TEST(ExAccErr, MonteCarloMatchesExhaustiveEnumeration) {
  constexpr std::size_t L = 6;
  const std::vector<std::vector<int>> reqs{{0}, {1}};
  std::vector<double> exact_r(L, 0.0), exact_e(L, 0.0);
  for (int first : {0, 1}) {
    const auto r = enumerate(kTeacher, kStudent, kStudent, first, L);
    const auto e = enumerate(kTeacher, kStudent, kTeacher, first, L);
    for (std::size_t l = 0; l < L; ++l) {
      exact_r[l] += r[l] / 2.0;
      exact_e[l] += e[l] / 2.0;
    }
  }

  // One large run: every step within 3 standard errors.
  ExposureBiasConfig cfg;
  cfg.max_steps = L;
  cfg.n_samples = 2000;
  cfg.eos_id = -1;
  cfg.seed = 99;
  const auto rep = exaccerr(kTeacher, kStudent, reqs, cfg);
  for (std::size_t l = 0; l < L; ++l) {
    EXPECT_NEAR(rep.r[l], exact_r[l], 3.0 * rep.r_stderr[l] + 1e-12) << "R at l=" << l + 1;
    EXPECT_NEAR(rep.e[l], exact_e[l], 3.0 * rep.e_stderr[l] + 1e-12) << "E at l=" << l + 1;
  }

  // Mean of 50 independent small runs: within 3 standard errors of that mean.
  cfg.n_samples = 20;
  std::vector<double> last;
  for (std::uint64_t s = 0; s < 50; ++s) {
    cfg.seed = 1000 + s;
    last.push_back(exaccerr(kTeacher, kStudent, reqs, cfg).r[L - 1]);
  }
  double mean = 0.0, sq = 0.0;
  for (double v : last) mean += v / 50.0;
  for (double v : last) sq += (v - mean) * (v - mean);
  const double se = std::sqrt(sq / 49.0 / 50.0);
  EXPECT_NEAR(mean, exact_r[L - 1], 3.0 * se);
}

TEST(ExAccErr, Contracts) {
  const std::vector<std::vector<int>> reqs{{0}};
  ExposureBiasConfig cfg;
  cfg.max_steps = 0;
  EXPECT_THROW(exaccerr(kTeacher, kStudent, reqs, cfg), ConfigError);
  cfg.max_steps = 3;
  cfg.n_samples = 0;
  EXPECT_THROW(exaccerr(kTeacher, kStudent, reqs, cfg), ConfigError);
  cfg.n_samples = 1;
  EXPECT_THROW(exaccerr(kTeacher, kStudent, std::span<const std::vector<int>>{}, cfg), ContractError);
}

TEST(Probe, IdenticalStudentsGiveEqualColumns) {
  ModelConfig c;
  c.vocab_size = Vocab::standard().size();
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.max_seq_len = 128;
  auto teacher = ModelParams::init(c);
  teacher.set_frozen(true);
  c.seed = 4;
  auto student = ModelParams::init(c);
  Rng rng(3);
  std::vector<double> pv(2 * 8);
  for (auto& v : pv) v = rng.normal(0.0, 0.5);
  SoftPrompt prompt{Tensor::from({2, 8}, pv)};
  const auto vocab = Vocab::standard();
  std::vector<EncodedExample> ex;
  for (const auto& e : gen_synthetic(SyntheticTask::copy, 3, 1, 4)) ex.push_back(encode_example(e, vocab));
  const ProbeSplit split{"seen", ex};
  DecodeConfig dc;
  dc.max_new_tokens = 6;
  const std::uint64_t seeds[] = {1};
  const auto rows = prompted_kl_probe(teacher, &prompt, student, student, {&split, 1}, vocab, dc, seeds);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_FALSE(rows[0].prompted);
  EXPECT_TRUE(rows[1].prompted);
  for (const auto& r : rows) EXPECT_EQ(r.kl_initial, r.kl_final);
  EXPECT_NEAR(response_kl(teacher, nullptr, teacher, ex), 0.0, 1e-12);
  const SoftPrompt empty;
  EXPECT_EQ(response_kl(teacher, &empty, student, ex), response_kl(teacher, nullptr, student, ex));
}
