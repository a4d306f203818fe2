#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptkd/data.hpp"
#include "promptkd/model.hpp"
#include "promptkd/sampler.hpp"
#include "promptkd/vocab.hpp"

namespace promptkd {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
};

std::vector<std::string> whitespace_tokens(std::string_view text);

// Length of the longest common subsequence (two-row dynamic programme).
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

// ROUGE-L with F1. An empty candidate scores zero; an empty reference
// throws ContractError.
RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
RougeScore rouge_l_text(std::string_view candidate, std::string_view reference);

struct RougeEval {
  double mean_f = 0.0;             // mean over seeds
  std::vector<double> per_seed_f;  // mean over examples, one entry per seed
};

// Samples one response per (example, seed) and scores it against the
// ground-truth response text. The RNG stream of example i under seed s is
// keyed by (s, i).
RougeEval evaluate_rouge(const ModelParams& params, const SoftPrompt* prompt,
                         std::span<const EncodedExample> examples, const Vocab& vocab,
                         const DecodeConfig& decode, std::span<const std::uint64_t> seeds);

struct ExposureBiasConfig {
  std::size_t max_steps = 50;  // L
  std::size_t n_samples = 8;   // prefixes per request and per generator
  std::uint64_t seed = 0;
  int eos_id = Vocab::kEos;    // negative: sequences never terminate
  double guard = 1e-8;
};

// R(l), E(l) and ExAccErr(l) for l = 1..L (index l - 1).
struct ExposureBiasReport {
  std::vector<double> r;
  std::vector<double> e;
  std::vector<double> r_stderr;
  std::vector<double> e_stderr;
  std::vector<double> exaccerr;  // percent; NaN where undefined
  std::vector<bool> defined;
  std::size_t n_requests = 0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

// Monte Carlo estimate of the accumulated teacher-to-student forward KL
// along prefixes sampled from the student (R) and from the teacher (E).
// Prefixes are sampled from the raw model distributions; the expectation
// over the next token is summed exactly over the vocabulary. A prefix that
// has emitted eos contributes nothing at later steps.
//
// ExAccErr(l) = (R(l) - E(l)) / E(l) * 100. When |E(l)| < guard the value is
// 0 if |R(l)| < guard as well, and undefined otherwise.
ExposureBiasReport exaccerr(const AutoregressiveModel& teacher, const AutoregressiveModel& student,
                            std::span<const std::vector<int>> requests,
                            const ExposureBiasConfig& cfg);

double exaccerr_value(double r, double e, double guard, bool* defined = nullptr);

// One row of the prompted-teacher analysis table.
struct ProbeRow {
  std::string split;
  bool prompted = false;
  double kl_initial = 0.0;  // KL(teacher || S_i), response part, teacher-forced
  double kl_final = 0.0;    // KL(teacher || S_f)
  double rouge_f = 0.0;     // teacher variant's sampled ROUGE-L vs ground truth
};

struct ProbeSplit {
  std::string name;
  std::span<const EncodedExample> examples;
};

// For every split, rows for the promptless teacher and (when prompt is
// non-null) the prompted teacher.
std::vector<ProbeRow> prompted_kl_probe(const ModelParams& teacher, const SoftPrompt* prompt,
                                        const ModelParams& student_initial,
                                        const ModelParams& student_final,
                                        std::span<const ProbeSplit> splits, const Vocab& vocab,
                                        const DecodeConfig& decode,
                                        std::span<const std::uint64_t> seeds);

// Mean over examples of KL(teacher || student) on ground-truth responses.
double response_kl(const ModelParams& teacher, const SoftPrompt* prompt,
                   const ModelParams& student, std::span<const EncodedExample> examples);

}  // namespace promptkd
