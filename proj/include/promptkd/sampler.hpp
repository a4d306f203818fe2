#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "promptkd/model.hpp"
#include "promptkd/rng.hpp"
#include "promptkd/vocab.hpp"

namespace promptkd {

struct DecodeConfig {
  double temperature = 1.0;
  std::size_t top_k = 0;  // 0 disables
  double top_p = 1.0;     // in (0, 1]
  std::size_t max_new_tokens = 32;
  std::uint64_t seed = 0;

  // Throws ConfigError when temperature <= 0, top_p outside (0, 1] or
  // max_new_tokens == 0.
  void validate() const;
};

// Temperature scaling, then top-k, then top-p on the renormalised top-k
// survivors. Returns survivor probabilities summing to 1 (zeros elsewhere).
// Ties in rank are broken toward the lower token id. The most probable
// token always survives.
std::vector<double> filter_distribution(std::span<const double> log_probs, const DecodeConfig& cfg);

// Inverse-CDF draw from a probability vector.
int sample_categorical(std::span<const double> probs, Rng& rng);

// Lowest id among the maximal entries.
int argmax(std::span<const double> values);

// Draws tokens one at a time until eos (included in the output) or
// max_new_tokens. Runs with gradient recording disabled. Throws LengthError
// when request.size() + max_new_tokens exceeds the model's max length.
std::vector<int> sample_response(const AutoregressiveModel& model, std::span<const int> request,
                                 const DecodeConfig& cfg, Rng& rng, int eos_id = Vocab::kEos);

// Same, with the RNG stream keyed by (cfg.seed, stream_index) so the draw
// for one example is independent of batch order.
std::vector<int> sample_response(const ModelParams& params, const SoftPrompt* prompt,
                                 std::span<const int> request, const DecodeConfig& cfg,
                                 std::uint64_t stream_index);

std::vector<int> greedy_decode(const AutoregressiveModel& model, std::span<const int> request,
                               std::size_t max_new_tokens, int eos_id = Vocab::kEos);
std::vector<int> greedy_decode(const ModelParams& params, const SoftPrompt* prompt,
                               std::span<const int> request, std::size_t max_new_tokens);

}  // namespace promptkd
