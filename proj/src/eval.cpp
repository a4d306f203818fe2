#include "promptkd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "promptkd/distill.hpp"
#include "promptkd/errors.hpp"
#include "promptkd/tensor.hpp"

namespace promptkd {

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (reference.empty()) throw ContractError("rouge_l: empty reference");
  RougeScore s;
  const auto lcs = lcs_length(candidate, reference);
  if (candidate.empty() || lcs == 0) return s;
  s.precision = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  s.recall = static_cast<double>(lcs) / static_cast<double>(reference.size());
  s.f_measure = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

RougeScore rouge_l_text(std::string_view candidate, std::string_view reference) {
  const auto c = whitespace_tokens(candidate);
  const auto r = whitespace_tokens(reference);
  return rouge_l(c, r);
}

RougeEval evaluate_rouge(const ModelParams& params, const SoftPrompt* prompt,
                         std::span<const EncodedExample> examples, const Vocab& vocab,
                         const DecodeConfig& decode, std::span<const std::uint64_t> seeds) {
  if (examples.empty()) throw ContractError("evaluate_rouge: no examples");
  if (seeds.empty()) throw ContractError("evaluate_rouge: no seeds");
  RougeEval out;
  for (auto seed : seeds) {
    DecodeConfig d = decode;
    d.seed = seed;
    double total = 0.0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto& ex = examples[i];
      const auto ids = sample_response(params, prompt, ex.request_ids, d, i);
      total += rouge_l_text(vocab.decode(ids), vocab.decode(ex.response_ids)).f_measure;
    }
    out.per_seed_f.push_back(total / static_cast<double>(examples.size()));
  }
  double s = 0.0;
  for (double f : out.per_seed_f) s += f;
  out.mean_f = s / static_cast<double>(out.per_seed_f.size());
  return out;
}

double exaccerr_value(double r, double e, double guard, bool* defined) {
  if (std::abs(e) < guard) {
    const bool ok = std::abs(r) < guard;
    if (defined) *defined = ok;
    return ok ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  }
  if (defined) *defined = true;
  return (r - e) / e * 100.0;
}

namespace {

// Running per-step sums of the accumulated divergence over samples.
struct Accumulator {
  explicit Accumulator(std::size_t steps) : sum(steps, 0.0), sum_sq(steps, 0.0) {}
  std::vector<double> sum, sum_sq;
  std::size_t count = 0;

  void add(const std::vector<double>& cumulative) {
    for (std::size_t l = 0; l < sum.size(); ++l) {
      sum[l] += cumulative[l];
      sum_sq[l] += cumulative[l] * cumulative[l];
    }
    ++count;
  }
  double mean(std::size_t l) const { return sum[l] / static_cast<double>(count); }
  double stderr_of_mean(std::size_t l) const {
    if (count < 2) return 0.0;
    const double n = static_cast<double>(count);
    const double m = mean(l);
    const double var = std::max(0.0, (sum_sq[l] - n * m * m) / (n - 1.0));
    return std::sqrt(var / n);
  }
};

// Accumulated KL(p || q) at steps 1..L along one prefix.
std::vector<double> accumulated_kl(const AutoregressiveModel& teacher,
                                   const AutoregressiveModel& student,
                                   std::span<const int> request, const std::vector<int>& prefix,
                                   std::size_t steps, int eos_id) {
  const std::size_t v = teacher.vocab_size();
  const auto p = teacher.continuation_log_probs(request, prefix);
  const auto q = student.continuation_log_probs(request, prefix);
  std::vector<double> out(steps, 0.0);
  double acc = 0.0;
  bool ended = false;
  for (std::size_t t = 0; t < steps; ++t) {
    if (!ended && t <= prefix.size()) {
      double kl = 0.0;
      for (std::size_t j = 0; j < v; ++j) {
        const double lp = p[t * v + j];
        if (lp == -INFINITY) continue;
        kl += std::exp(lp) * (lp - q[t * v + j]);
      }
      acc += kl;
      if (t < prefix.size() && prefix[t] == eos_id) ended = true;
    }
    out[t] = acc;
  }
  return out;
}

constexpr std::uint64_t kStudentPrefixStream = 0x52;  // 'R'
constexpr std::uint64_t kTeacherPrefixStream = 0x45;  // 'E'

}  // namespace

ExposureBiasReport exaccerr(const AutoregressiveModel& teacher, const AutoregressiveModel& student,
                            std::span<const std::vector<int>> requests,
                            const ExposureBiasConfig& cfg) {
  if (cfg.max_steps == 0) throw ConfigError("exaccerr: L must be >= 1");
  if (cfg.n_samples == 0) throw ConfigError("exaccerr: n_samples must be >= 1");
  if (requests.empty()) throw ContractError("exaccerr: no requests");
  if (teacher.vocab_size() != student.vocab_size()) {
    throw DimensionError("exaccerr: teacher and student vocabularies differ");
  }
  NoGradGuard no_grad;
  const std::size_t L = cfg.max_steps;
  Accumulator r_acc(L), e_acc(L);

  DecodeConfig raw;  // temperature 1, no filtering: the model distribution itself
  raw.max_new_tokens = L - 1;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& req = requests[i];
    for (std::size_t s = 0; s < cfg.n_samples; ++s) {
      const auto index = static_cast<std::uint64_t>(i * cfg.n_samples + s);
      std::vector<int> q_prefix, p_prefix;
      if (L > 1) {
        Rng rq(stream_seed(cfg.seed ^ kStudentPrefixStream, index));
        Rng rp(stream_seed(cfg.seed ^ kTeacherPrefixStream, index));
        q_prefix = sample_response(student, req, raw, rq, cfg.eos_id);
        p_prefix = sample_response(teacher, req, raw, rp, cfg.eos_id);
      }
      r_acc.add(accumulated_kl(teacher, student, req, q_prefix, L, cfg.eos_id));
      e_acc.add(accumulated_kl(teacher, student, req, p_prefix, L, cfg.eos_id));
    }
  }

  ExposureBiasReport rep;
  rep.n_requests = requests.size();
  rep.n_samples = cfg.n_samples;
  rep.seed = cfg.seed;
  for (std::size_t l = 0; l < L; ++l) {
    rep.r.push_back(r_acc.mean(l));
    rep.e.push_back(e_acc.mean(l));
    rep.r_stderr.push_back(r_acc.stderr_of_mean(l));
    rep.e_stderr.push_back(e_acc.stderr_of_mean(l));
    bool ok = false;
    rep.exaccerr.push_back(exaccerr_value(rep.r.back(), rep.e.back(), cfg.guard, &ok));
    rep.defined.push_back(ok);
  }
  return rep;
}

double response_kl(const ModelParams& teacher, const SoftPrompt* prompt,
                   const ModelParams& student, std::span<const EncodedExample> examples) {
  if (examples.empty()) throw ContractError("response_kl: no examples");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& ex : examples) {
    Tensor p = response_log_probs(teacher, prompt, ex.request_ids, ex.response_ids);
    Tensor q = response_log_probs(student, nullptr, ex.request_ids, ex.response_ids);
    total += masked_kl(p, q, std::vector<bool>(p.rows(), true)).item();
  }
  return total / static_cast<double>(examples.size());
}

std::vector<ProbeRow> prompted_kl_probe(const ModelParams& teacher, const SoftPrompt* prompt,
                                        const ModelParams& student_initial,
                                        const ModelParams& student_final,
                                        std::span<const ProbeSplit> splits, const Vocab& vocab,
                                        const DecodeConfig& decode,
                                        std::span<const std::uint64_t> seeds) {
  std::vector<ProbeRow> rows;
  for (const auto& split : splits) {
    for (int variant = 0; variant < (prompt ? 2 : 1); ++variant) {
      const SoftPrompt* p = variant == 1 ? prompt : nullptr;
      ProbeRow row;
      row.split = split.name;
      row.prompted = variant == 1;
      row.kl_initial = response_kl(teacher, p, student_initial, split.examples);
      row.kl_final = response_kl(teacher, p, student_final, split.examples);
      row.rouge_f = evaluate_rouge(teacher, p, split.examples, vocab, decode, seeds).mean_f;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace promptkd
