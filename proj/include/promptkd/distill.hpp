#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "promptkd/data.hpp"
#include "promptkd/model.hpp"
#include "promptkd/optim.hpp"
#include "promptkd/rng.hpp"
#include "promptkd/sampler.hpp"
#include "promptkd/tensor.hpp"

namespace promptkd {

enum class Method { promptkd, sft, kd, seqkd, gkd };

Method parse_method(std::string_view name);
std::string_view method_name(Method method);

// Which argument of the divergence holds the distribution being trained.
// reverse: D(trained || other); forward: D(other || trained).
enum class KlDirection { reverse, forward };

KlDirection parse_direction(std::string_view name);
std::string_view direction_name(KlDirection dir);

struct TrainConfig {
  std::size_t total_steps = 100;  // K
  double learning_rate = 1e-3;    // shared by prompt and student
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  Method method = Method::promptkd;
  KlDirection kd_direction = KlDirection::reverse;
  KlDirection reg_direction = KlDirection::reverse;
  KlDirection student_direction = KlDirection::reverse;
  bool use_regularization = true;
  double weight_decay = 0.0;

  // Throws ConfigError when K == 0, lr <= 0 or batch_size == 0.
  void validate() const;
};

struct StepRecord {
  std::int64_t step = 0;  // k, 0-based
  double loss_kd = 0.0;
  double loss_reg = 0.0;
  double coefficient = 0.0;
  double loss_prompt = 0.0;
  double loss_student = 0.0;
  double wall_seconds = 0.0;
};

// One request with the response the losses are evaluated on (ground truth
// or a sampled pseudo-target).
struct Sequence {
  std::vector<int> request;
  std::vector<int> response;
};

// KL(P || Q) summed over the vocabulary at each masked row, averaged over
// the masked rows. Inputs are log-probabilities [T x V]. Throws
// DimensionError on shape mismatch and ContractError when no row is masked.
Tensor masked_kl(const Tensor& p_log, const Tensor& q_log, const std::vector<bool>& mask);

// Mean negative log-likelihood of targets under log_probs [T x V].
Tensor cross_entropy(const Tensor& log_probs, std::span<const int> targets);

// (K - k) / K. Throws ContractError unless 0 <= k <= K and K > 0.
double reg_coefficient(std::int64_t k, std::int64_t K);

// Batch means of the per-sequence divergences below. Only the named
// trainable side records a graph; everything else runs without gradient.

// D(p(y|P,x) || q(y|x)); trains the prompt.
Tensor loss_kd(const ModelParams& teacher, const SoftPrompt& prompt, const ModelParams& student,
               std::span<const Sequence> batch, KlDirection dir = KlDirection::reverse);
// D(p(y|P,x) || p(y|x)); trains the prompt.
Tensor loss_reg(const ModelParams& teacher, const SoftPrompt& prompt,
                std::span<const Sequence> batch, KlDirection dir = KlDirection::reverse);

struct PromptLoss {
  Tensor total;  // kd + coefficient * reg
  Tensor kd;
  Tensor reg;    // undefined when regularisation is off
  double coefficient = 0.0;
};

// L_kd + ((K - k) / K) L_reg, sharing one prompted-teacher pass.
PromptLoss loss_prompt(const ModelParams& teacher, const SoftPrompt& prompt,
                       const ModelParams& student, std::span<const Sequence> batch,
                       std::int64_t k, std::int64_t K, const TrainConfig& cfg);

// D(q(y|x) || p(y|P,x)); trains the student.
Tensor loss_student(const ModelParams& teacher, const SoftPrompt& prompt,
                    const ModelParams& student, std::span<const Sequence> batch,
                    KlDirection dir = KlDirection::reverse);

// Pseudo-targets drawn from the student for each request, without gradient.
// Stream i of the step uses RNG index k * batch + i.
std::vector<Sequence> sample_pseudo_targets(const ModelParams& model, const SoftPrompt* prompt,
                                            std::span<const EncodedExample* const> requests,
                                            const DecodeConfig& decode, std::int64_t k);

// One iteration: sample y from the current student, update P on L_prompt,
// then update theta on L_student against the already updated P.
StepRecord promptkd_step(const ModelParams& teacher, SoftPrompt& prompt, ModelParams& student,
                         AdamW& prompt_opt, AdamW& student_opt,
                         std::span<const EncodedExample* const> requests, std::int64_t k,
                         const TrainConfig& cfg, const DecodeConfig& decode);

// Teacher samples for SeqKD, regenerated once per epoch.
class SeqKdCache {
 public:
  const std::vector<int>& get(const ModelParams& teacher, const EncodedExample& ex,
                              std::size_t index, std::size_t epoch, const DecodeConfig& decode);

 private:
  struct Entry {
    std::size_t epoch = 0;
    std::vector<int> response;
  };
  std::map<std::size_t, Entry> entries_;
};

// Baseline trainers; each updates theta only.
//   sft:   cross-entropy on ground truth
//   kd:    forward KL(teacher || student) on ground truth
//   seqkd: cross-entropy on cached teacher samples
//   gkd:   reverse KL(student || teacher) on fresh student samples
// Throws ConfigError for Method::promptkd, DependencyError when a teacher
// is required but absent.
StepRecord baseline_step(Method method, const ModelParams* teacher, ModelParams& student,
                         AdamW& student_opt, std::span<const EncodedExample* const> batch,
                         std::span<const std::size_t> indices, std::size_t epoch,
                         SeqKdCache* seqkd_cache, std::int64_t k, const TrainConfig& cfg,
                         const DecodeConfig& decode);

// Epoch-wise seeded permutations over n training items.
class DataStream {
 public:
  DataStream(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next_batch(std::size_t size);
  std::size_t epoch() const { return epoch_; }
  // Positions the stream as if `batches` batches of `size` were drawn.
  void skip(std::size_t batches, std::size_t size);

 private:
  void reshuffle();
  std::size_t n_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

// Owns the per-run state of one training method: data stream, optimizers,
// SeqKD cache and the step counter.
class Trainer {
 public:
  // teacher may be null only for SFT; it must be frozen otherwise. prompt
  // is required for PromptKD and ignored by the baselines.
  Trainer(const ModelParams* teacher, ModelParams& student, SoftPrompt* prompt,
          std::span<const EncodedExample> train, TrainConfig cfg, DecodeConfig decode);

  StepRecord step();
  std::int64_t current_step() const { return k_; }
  bool done() const { return k_ >= static_cast<std::int64_t>(cfg_.total_steps); }

  AdamW& student_optimizer() { return student_opt_; }
  AdamW* prompt_optimizer() { return prompt_opt_ ? &*prompt_opt_ : nullptr; }
  const TrainConfig& config() const { return cfg_; }

  // Resume support: restores the step counter and data position.
  void set_step(std::int64_t k);

 private:
  const ModelParams* teacher_;
  ModelParams& student_;
  SoftPrompt* prompt_;
  std::span<const EncodedExample> train_;
  TrainConfig cfg_;
  DecodeConfig decode_;
  DataStream stream_;
  AdamW student_opt_;
  std::optional<AdamW> prompt_opt_;
  SeqKdCache seqkd_cache_;
  std::int64_t k_ = 0;
};

}  // namespace promptkd
