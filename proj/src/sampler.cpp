#include "promptkd/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "promptkd/errors.hpp"
#include "promptkd/tensor.hpp"

namespace promptkd {

namespace {

void normalise(std::vector<double>& p) {
  const double z = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= z;
}

// Indices of the non-zero entries, by descending probability then id.
std::vector<std::size_t> ranked(const std::vector<double>& p) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return idx;
}

void check_length(const AutoregressiveModel& model, std::size_t request, std::size_t max_new) {
  if (request == 0) throw ContractError("decode: empty request");
  if (request + max_new > model.max_length()) {
    throw LengthError("decode: request of " + std::to_string(request) + " tokens plus " +
                      std::to_string(max_new) + " new tokens exceeds model length " +
                      std::to_string(model.max_length()));
  }
}

}  // namespace

void DecodeConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("decode: temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("decode: top_p must lie in (0, 1]");
  if (max_new_tokens == 0) throw ConfigError("decode: max_new_tokens must be positive");
}

std::vector<double> filter_distribution(std::span<const double> log_probs, const DecodeConfig& cfg) {
  cfg.validate();
  const std::size_t v = log_probs.size();
  if (v == 0) throw ContractError("filter_distribution: empty distribution");
  double mx = -INFINITY;
  for (double x : log_probs) mx = std::max(mx, x / cfg.temperature);
  std::vector<double> p(v);
  for (std::size_t i = 0; i < v; ++i) p[i] = std::exp(log_probs[i] / cfg.temperature - mx);
  normalise(p);

  if (cfg.top_k > 0 && cfg.top_k < v) {
    const auto order = ranked(p);
    for (std::size_t r = cfg.top_k; r < order.size(); ++r) p[order[r]] = 0.0;
    normalise(p);
  }
  if (cfg.top_p < 1.0) {
    const auto order = ranked(p);
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < order.size()) {
      cum += p[order[keep++]];
      if (cum >= cfg.top_p - 1e-12) break;
    }
    for (std::size_t r = keep; r < order.size(); ++r) p[order[r]] = 0.0;
    normalise(p);
  }
  return p;
}

int sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform01();
  double cum = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last = static_cast<int>(i);
    if (u < cum) return last;
  }
  if (last < 0) throw ContractError("sample_categorical: no probability mass");
  return last;
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax: empty input");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<int> sample_response(const AutoregressiveModel& model, std::span<const int> request,
                                 const DecodeConfig& cfg, Rng& rng, int eos_id) {
  cfg.validate();
  check_length(model, request.size(), cfg.max_new_tokens);
  NoGradGuard no_grad;
  std::vector<int> out;
  while (out.size() < cfg.max_new_tokens) {
    const auto last = model.next_log_probs(request, out);
    const int tok = sample_categorical(filter_distribution(last, cfg), rng);
    out.push_back(tok);
    if (tok == eos_id) break;
  }
  return out;
}

std::vector<int> sample_response(const ModelParams& params, const SoftPrompt* prompt,
                                 std::span<const int> request, const DecodeConfig& cfg,
                                 std::uint64_t stream_index) {
  Rng rng(stream_seed(cfg.seed, stream_index));
  return sample_response(TransformerLM(params, prompt), request, cfg, rng);
}

std::vector<int> greedy_decode(const AutoregressiveModel& model, std::span<const int> request,
                               std::size_t max_new_tokens, int eos_id) {
  if (max_new_tokens == 0) throw ConfigError("decode: max_new_tokens must be positive");
  check_length(model, request.size(), max_new_tokens);
  NoGradGuard no_grad;
  std::vector<int> out;
  while (out.size() < max_new_tokens) {
    const int tok = argmax(model.next_log_probs(request, out));
    out.push_back(tok);
    if (tok == eos_id) break;
  }
  return out;
}

std::vector<int> greedy_decode(const ModelParams& params, const SoftPrompt* prompt,
                               std::span<const int> request, std::size_t max_new_tokens) {
  return greedy_decode(TransformerLM(params, prompt), request, max_new_tokens);
}

}  // namespace promptkd
