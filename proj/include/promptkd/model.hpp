#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptkd/rng.hpp"
#include "promptkd/tensor.hpp"
#include "promptkd/vocab.hpp"

namespace promptkd {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t max_seq_len = 128;
  std::uint64_t seed = 0;
  bool tied_output = false;

  // Throws ConfigError on a zero size or d_model % n_heads != 0.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor qkv_weight, qkv_bias;    // [d x 3d], [3d]
  Tensor proj_weight, proj_bias;  // [d x d], [d]
  Tensor ln2_gain, ln2_bias;
  Tensor fc_weight, fc_bias;      // [d x 4d], [4d]
  Tensor out_weight, out_bias;    // [4d x d], [d]
};

// Weights of one pre-LN decoder-only transformer.
class ModelParams {
 public:
  ModelParams() = default;

  // Gaussian(0, 0.02) embeddings and projections; zero biases and zero
  // output projection of every residual branch; unit layer-norm gains.
  static ModelParams init(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // Every parameter tensor in a fixed declared order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  // Frozen parameters never require grad, so no op records a graph edge
  // into them.
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }

  // Deep copy with fresh storage.
  ModelParams clone() const;

  // Copies values from another model with the same config.
  void copy_values_from(const ModelParams& other);

  Tensor token_embedding;     // [V x d]
  Tensor position_embedding;  // [max_seq_len x d]
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor lm_head;  // [d x V]; undefined when the output is tied
  Tensor lm_bias;  // [V]

 private:
  ModelConfig cfg_;
  bool frozen_ = false;
};

// Trainable embedding rows prepended to the input sequence.
struct SoftPrompt {
  Tensor embeddings;  // [m x d]; undefined or absent means m = 0

  std::size_t length() const { return embeddings.defined() ? embeddings.rows() : 0; }
  std::size_t dim() const { return embeddings.defined() ? embeddings.cols() : 0; }
};

// Log-probabilities [(m + n) x V]. Row t is the next-token distribution
// after the first t + 1 rows. Prompt rows come first and get no position
// embedding, so ids sit at positions 0..n-1 whether or not a prompt is
// present. Throws LengthError when m + n > max_seq_len.
Tensor forward(const ModelParams& params, std::span<const int> ids,
               const SoftPrompt* prompt = nullptr);

// The T rows predicting response_ids under teacher forcing on
// prompt ++ request ++ response. Throws ContractError for an empty response.
Tensor response_log_probs(const ModelParams& params, const SoftPrompt* prompt,
                          std::span<const int> request_ids, std::span<const int> response_ids);

enum class PromptInit { random, padding, text };

PromptInit parse_prompt_init(std::string_view name);
std::string_view prompt_init_name(PromptInit method);

inline constexpr std::string_view kDefaultPromptText = "Suppose you are a student.";
inline constexpr double kRandomPromptStddev = 0.02;

// random: N(0, 0.02) rows. padding: every row is the <pad> embedding.
// text: row i is the embedding of text token (i mod n_text), so the text is
// truncated when m is shorter and cycled from its start when longer.
SoftPrompt init_prompt(PromptInit method, std::size_t length, std::string_view init_text,
                       const Vocab& vocab, const ModelParams& params, Rng& rng);

// Autoregressive next-token model over a fixed vocabulary. Implementations
// must be pure given their inputs.
class AutoregressiveModel {
 public:
  virtual ~AutoregressiveModel() = default;

  virtual std::size_t vocab_size() const = 0;
  // Longest request ++ continuation the model accepts.
  virtual std::size_t max_length() const = 0;

  // Row i (i = 0..continuation.size()) holds log p(. | request,
  // continuation[0..i)); flattened row-major, (len + 1) x V.
  virtual std::vector<double> continuation_log_probs(std::span<const int> request,
                                                     std::span<const int> continuation) const = 0;

  // Last row of continuation_log_probs: log p(. | request, continuation).
  virtual std::vector<double> next_log_probs(std::span<const int> request,
                                             std::span<const int> continuation) const;
};

// Transformer with an optional soft prompt behind the generic interface.
// Evaluates without recording a graph.
class TransformerLM final : public AutoregressiveModel {
 public:
  explicit TransformerLM(const ModelParams& params, const SoftPrompt* prompt = nullptr)
      : params_(&params), prompt_(prompt) {}

  std::size_t vocab_size() const override { return params_->config().vocab_size; }
  std::size_t max_length() const override;
  std::vector<double> continuation_log_probs(std::span<const int> request,
                                             std::span<const int> continuation) const override;

  // Keeps per-layer keys and values of the last sequence scored, so calls
  // that extend it cost one position each. Bitwise equal to the last row of
  // forward(). Not safe for concurrent use of one instance.
  std::vector<double> next_log_probs(std::span<const int> request,
                                     std::span<const int> continuation) const override;

 private:
  struct KvCache {
    std::vector<int> ids;                      // tokens consumed after the prompt
    std::vector<std::vector<double>> k, v;     // per layer, row-major [positions x d]
    std::vector<double> last;                  // log-probs after the final position
    bool primed = false;
  };

  void reset_cache() const;
  void advance(Tensor x) const;

  const ModelParams* params_;
  const SoftPrompt* prompt_;
  mutable KvCache cache_;
};

}  // namespace promptkd
