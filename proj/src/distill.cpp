#include "promptkd/distill.hpp"

#include <algorithm>
#include <chrono>

#include "promptkd/errors.hpp"
#include "promptkd/ops.hpp"

namespace promptkd {

namespace {

using Clock = std::chrono::steady_clock;

// Stream tags keep pseudo-target and SeqKD draws apart from each other.
constexpr std::uint64_t kPseudoTargetStream = 0x70736575646fULL;
constexpr std::uint64_t kSeqKdStream = 0x7365716b64ULL;

Tensor divergence(const Tensor& trained, const Tensor& other, KlDirection dir) {
  const std::vector<bool> all(trained.rows(), true);
  return dir == KlDirection::reverse ? masked_kl(trained, other, all)
                                     : masked_kl(other, trained, all);
}

Tensor batch_mean(const std::vector<Tensor>& terms) {
  if (terms.empty()) throw ContractError("loss over an empty batch");
  Tensor acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

Tensor no_grad_rows(const ModelParams& params, const SoftPrompt* prompt, const Sequence& s) {
  NoGradGuard guard;
  return response_log_probs(params, prompt, s.request, s.response);
}

void require_batch(std::span<const Sequence> batch) {
  if (batch.empty()) throw ContractError("loss over an empty batch");
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

Method parse_method(std::string_view name) {
  if (name == "promptkd") return Method::promptkd;
  if (name == "sft") return Method::sft;
  if (name == "kd") return Method::kd;
  if (name == "seqkd") return Method::seqkd;
  if (name == "gkd") return Method::gkd;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

std::string_view method_name(Method method) {
  switch (method) {
    case Method::promptkd: return "promptkd";
    case Method::sft: return "sft";
    case Method::kd: return "kd";
    case Method::seqkd: return "seqkd";
    case Method::gkd: return "gkd";
  }
  return "";
}

KlDirection parse_direction(std::string_view name) {
  if (name == "reverse") return KlDirection::reverse;
  if (name == "forward") return KlDirection::forward;
  throw ConfigError("unknown KL direction '" + std::string(name) + "'");
}

std::string_view direction_name(KlDirection dir) {
  return dir == KlDirection::reverse ? "reverse" : "forward";
}

void TrainConfig::validate() const {
  if (total_steps == 0) throw ConfigError("train: total_steps must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
}

Tensor masked_kl(const Tensor& p_log, const Tensor& q_log, const std::vector<bool>& mask) {
  if (p_log.shape() != q_log.shape() || p_log.dim() != 2) {
    throw DimensionError("masked_kl: shapes " + shape_string(p_log.shape()) + " and " +
                         shape_string(q_log.shape()) + " must be equal [T x V]");
  }
  const std::size_t rows = p_log.rows();
  if (mask.size() != rows) {
    throw DimensionError("masked_kl: mask length " + std::to_string(mask.size()) +
                         " differs from " + std::to_string(rows) + " rows");
  }
  const auto selected = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (selected == 0) throw ContractError("masked_kl: no masked positions");
  std::vector<double> weights(rows);
  for (std::size_t i = 0; i < rows; ++i) weights[i] = mask[i] ? 1.0 / static_cast<double>(selected) : 0.0;

  Tensor per_row = row_sum(mul(exp(p_log), sub(p_log, q_log)));
  return sum(mul(per_row, Tensor::from({rows}, std::move(weights))));
}

Tensor cross_entropy(const Tensor& log_probs, std::span<const int> targets) {
  const std::size_t rows = log_probs.rows(), v = log_probs.cols();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  std::vector<double> onehot(rows * v, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " out of range");
    }
    onehot[i * v + static_cast<std::size_t>(targets[i])] = -1.0 / static_cast<double>(rows);
  }
  return sum(mul(log_probs, Tensor::from({rows, v}, std::move(onehot))));
}

double reg_coefficient(std::int64_t k, std::int64_t K) {
  if (K <= 0) throw ContractError("reg_coefficient: K must be positive");
  if (k < 0 || k > K) {
    throw ContractError("reg_coefficient: step " + std::to_string(k) + " outside [0, " +
                        std::to_string(K) + "]");
  }
  return static_cast<double>(K - k) / static_cast<double>(K);
}

Tensor loss_kd(const ModelParams& teacher, const SoftPrompt& prompt, const ModelParams& student,
               std::span<const Sequence> batch, KlDirection dir) {
  require_batch(batch);
  std::vector<Tensor> terms;
  for (const auto& s : batch) {
    Tensor prompted = response_log_probs(teacher, &prompt, s.request, s.response);
    terms.push_back(divergence(prompted, no_grad_rows(student, nullptr, s), dir));
  }
  return batch_mean(terms);
}

Tensor loss_reg(const ModelParams& teacher, const SoftPrompt& prompt,
                std::span<const Sequence> batch, KlDirection dir) {
  require_batch(batch);
  std::vector<Tensor> terms;
  for (const auto& s : batch) {
    Tensor prompted = response_log_probs(teacher, &prompt, s.request, s.response);
    terms.push_back(divergence(prompted, no_grad_rows(teacher, nullptr, s), dir));
  }
  return batch_mean(terms);
}

PromptLoss loss_prompt(const ModelParams& teacher, const SoftPrompt& prompt,
                       const ModelParams& student, std::span<const Sequence> batch,
                       std::int64_t k, std::int64_t K, const TrainConfig& cfg) {
  require_batch(batch);
  PromptLoss out;
  out.coefficient = reg_coefficient(k, K);
  std::vector<Tensor> kd_terms, reg_terms;
  for (const auto& s : batch) {
    Tensor prompted = response_log_probs(teacher, &prompt, s.request, s.response);
    kd_terms.push_back(divergence(prompted, no_grad_rows(student, nullptr, s), cfg.kd_direction));
    if (cfg.use_regularization) {
      reg_terms.push_back(divergence(prompted, no_grad_rows(teacher, nullptr, s), cfg.reg_direction));
    }
  }
  out.kd = batch_mean(kd_terms);
  if (cfg.use_regularization) {
    out.reg = batch_mean(reg_terms);
    out.total = add(out.kd, scale(out.reg, out.coefficient));
  } else {
    out.total = out.kd;
  }
  return out;
}

Tensor loss_student(const ModelParams& teacher, const SoftPrompt& prompt,
                    const ModelParams& student, std::span<const Sequence> batch,
                    KlDirection dir) {
  require_batch(batch);
  std::vector<Tensor> terms;
  for (const auto& s : batch) {
    Tensor q = response_log_probs(student, nullptr, s.request, s.response);
    terms.push_back(divergence(q, no_grad_rows(teacher, &prompt, s), dir));
  }
  return batch_mean(terms);
}

std::vector<Sequence> sample_pseudo_targets(const ModelParams& model, const SoftPrompt* prompt,
                                            std::span<const EncodedExample* const> requests,
                                            const DecodeConfig& decode, std::int64_t k) {
  std::vector<Sequence> out;
  out.reserve(requests.size());
  const auto base = static_cast<std::uint64_t>(k) * requests.size();
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& req = requests[i]->request_ids;
    out.push_back({req, sample_response(model, prompt, req, decode, base + i)});
  }
  return out;
}

StepRecord promptkd_step(const ModelParams& teacher, SoftPrompt& prompt, ModelParams& student,
                         AdamW& prompt_opt, AdamW& student_opt,
                         std::span<const EncodedExample* const> requests, std::int64_t k,
                         const TrainConfig& cfg, const DecodeConfig& decode) {
  if (!teacher.frozen()) throw ContractError("promptkd_step: teacher must be frozen");
  const auto t0 = Clock::now();
  const auto K = static_cast<std::int64_t>(cfg.total_steps);

  // 1. pseudo-targets from the pre-update student
  const auto batch = sample_pseudo_targets(student, nullptr, requests, decode, k);

  // 2. prompt update
  PromptLoss lp = loss_prompt(teacher, prompt, student, batch, k, K, cfg);
  if (lp.total.requires_grad()) {
    prompt_opt.zero_grad();
    lp.total.backward();
    prompt_opt.step();
    prompt_opt.zero_grad();
  }

  // 3. student update against the updated prompt
  Tensor ls = loss_student(teacher, prompt, student, batch, cfg.student_direction);
  student_opt.zero_grad();
  ls.backward();
  student_opt.step();
  student_opt.zero_grad();

  StepRecord rec;
  rec.step = k;
  rec.loss_kd = lp.kd.item();
  rec.loss_reg = lp.reg.defined() ? lp.reg.item() : 0.0;
  rec.coefficient = lp.coefficient;
  rec.loss_prompt = lp.total.item();
  rec.loss_student = ls.item();
  rec.wall_seconds = seconds_since(t0);
  return rec;
}

const std::vector<int>& SeqKdCache::get(const ModelParams& teacher, const EncodedExample& ex,
                                        std::size_t index, std::size_t epoch,
                                        const DecodeConfig& decode) {
  auto it = entries_.find(index);
  if (it != entries_.end() && it->second.epoch == epoch) return it->second.response;
  DecodeConfig d = decode;
  d.seed = stream_seed(decode.seed ^ kSeqKdStream, epoch);
  auto& e = entries_[index];
  e.epoch = epoch;
  e.response = sample_response(teacher, nullptr, ex.request_ids, d, index);
  return e.response;
}

StepRecord baseline_step(Method method, const ModelParams* teacher, ModelParams& student,
                         AdamW& student_opt, std::span<const EncodedExample* const> batch,
                         std::span<const std::size_t> indices, std::size_t epoch,
                         SeqKdCache* seqkd_cache, std::int64_t k, const TrainConfig& cfg,
                         const DecodeConfig& decode) {
  if (method == Method::promptkd) throw ConfigError("baseline_step: promptkd is not a baseline");
  if (method != Method::sft && !teacher) {
    throw DependencyError("baseline_step: method " + std::string(method_name(method)) +
                          " needs a teacher");
  }
  if (batch.empty()) throw ContractError("baseline_step: empty batch");
  const auto t0 = Clock::now();

  std::vector<Tensor> terms;
  switch (method) {
    case Method::sft:
      for (const auto* ex : batch) {
        Tensor q = response_log_probs(student, nullptr, ex->request_ids, ex->response_ids);
        terms.push_back(cross_entropy(q, ex->response_ids));
      }
      break;
    case Method::kd:
      for (const auto* ex : batch) {
        const Sequence s{ex->request_ids, ex->response_ids};
        Tensor q = response_log_probs(student, nullptr, s.request, s.response);
        terms.push_back(divergence(q, no_grad_rows(*teacher, nullptr, s), KlDirection::forward));
      }
      break;
    case Method::seqkd: {
      if (!seqkd_cache) throw ContractError("baseline_step: seqkd needs a sample cache");
      if (indices.size() != batch.size()) throw ContractError("baseline_step: index/batch mismatch");
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& y = seqkd_cache->get(*teacher, *batch[i], indices[i], epoch, decode);
        Tensor q = response_log_probs(student, nullptr, batch[i]->request_ids, y);
        terms.push_back(cross_entropy(q, y));
      }
      break;
    }
    case Method::gkd: {
      const auto seqs = sample_pseudo_targets(student, nullptr, batch, decode, k);
      for (const auto& s : seqs) {
        Tensor q = response_log_probs(student, nullptr, s.request, s.response);
        terms.push_back(divergence(q, no_grad_rows(*teacher, nullptr, s), KlDirection::reverse));
      }
      break;
    }
    case Method::promptkd:
      break;
  }

  Tensor loss = batch_mean(terms);
  student_opt.zero_grad();
  loss.backward();
  student_opt.step();
  student_opt.zero_grad();

  StepRecord rec;
  rec.step = k;
  rec.coefficient = reg_coefficient(k, static_cast<std::int64_t>(cfg.total_steps));
  rec.loss_student = loss.item();
  rec.wall_seconds = seconds_since(t0);
  return rec;
}

DataStream::DataStream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
  if (n == 0) throw ContractError("DataStream: empty dataset");
  reshuffle();
}

void DataStream::reshuffle() {
  order_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
  Rng rng(stream_seed(seed_, epoch_));
  for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng.uniform_index(i)]);
  cursor_ = 0;
}

std::vector<std::size_t> DataStream::next_batch(std::size_t size) {
  std::vector<std::size_t> out;
  out.reserve(size);
  while (out.size() < size) {
    if (cursor_ == n_) {
      ++epoch_;
      reshuffle();
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

void DataStream::skip(std::size_t batches, std::size_t size) {
  for (std::size_t i = 0; i < batches; ++i) next_batch(size);
}

namespace {

AdamWConfig adam_config(const TrainConfig& cfg) {
  AdamWConfig a;
  a.lr = cfg.learning_rate;
  a.weight_decay = cfg.weight_decay;
  return a;
}

}  // namespace

Trainer::Trainer(const ModelParams* teacher, ModelParams& student, SoftPrompt* prompt,
                 std::span<const EncodedExample> train, TrainConfig cfg, DecodeConfig decode)
    : teacher_(teacher),
      student_(student),
      prompt_(prompt),
      train_(train),
      cfg_((cfg.validate(), cfg)),
      decode_(decode),
      stream_(train.size(), stream_seed(cfg.seed, 0xda7aULL)),
      student_opt_(student.parameters(), adam_config(cfg)) {
  decode_.validate();
  decode_.seed = stream_seed(cfg_.seed, kPseudoTargetStream);
  if (cfg_.method != Method::sft) {
    if (!teacher_) {
      throw DependencyError("method " + std::string(method_name(cfg_.method)) + " needs a teacher");
    }
    if (!teacher_->frozen()) throw ContractError("trainer: teacher must be frozen");
  }
  if (student_.frozen()) throw ContractError("trainer: student must not be frozen");
  if (cfg_.method == Method::promptkd) {
    if (!prompt_) throw ContractError("trainer: promptkd needs a soft prompt");
    if (prompt_->length() > 0) {
      prompt_opt_.emplace(std::vector<Tensor>{prompt_->embeddings}, adam_config(cfg_));
    }
  }
}

void Trainer::set_step(std::int64_t k) {
  if (k < k_) throw ContractError("trainer: cannot rewind");
  stream_.skip(static_cast<std::size_t>(k - k_), cfg_.batch_size);
  k_ = k;
}

StepRecord Trainer::step() {
  if (done()) throw ContractError("trainer: all steps already taken");
  const auto indices = stream_.next_batch(cfg_.batch_size);
  std::vector<const EncodedExample*> batch;
  batch.reserve(indices.size());
  for (auto i : indices) batch.push_back(&train_[i]);

  StepRecord rec;
  if (cfg_.method == Method::promptkd) {
    if (prompt_opt_) {
      rec = promptkd_step(*teacher_, *prompt_, student_, *prompt_opt_, student_opt_, batch, k_,
                          cfg_, decode_);
    } else {
      // Empty prompt: nothing to tune, the student update still runs.
      AdamW unused({Tensor::zeros({1}, true)}, adam_config(cfg_));
      rec = promptkd_step(*teacher_, *prompt_, student_, unused, student_opt_, batch, k_, cfg_,
                          decode_);
    }
  } else {
    rec = baseline_step(cfg_.method, teacher_, student_, student_opt_, batch, indices,
                        stream_.epoch(), &seqkd_cache_, k_, cfg_, decode_);
  }
  ++k_;
  return rec;
}

}  // namespace promptkd
