#include "promptkd/model.hpp"

#include <algorithm>
#include <numeric>

#include "promptkd/errors.hpp"
#include "promptkd/ops.hpp"

namespace promptkd {

namespace {

constexpr double kInitStddev = 0.02;

Tensor gaussian(Shape shape, Rng& rng, double stddev) {
  const auto n = shape_numel(shape);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || max_seq_len == 0) {
    throw ConfigError("model config: all sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

ModelParams ModelParams::init(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed));
  const std::size_t d = cfg.d_model, v = cfg.vocab_size;
  ModelParams p;
  p.cfg_ = cfg;
  p.token_embedding = gaussian({v, d}, rng, kInitStddev);
  p.position_embedding = gaussian({cfg.max_seq_len, d}, rng, kInitStddev);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerParams layer;
    layer.ln1_gain = Tensor::full({d}, 1.0, true);
    layer.ln1_bias = Tensor::zeros({d}, true);
    layer.qkv_weight = gaussian({d, 3 * d}, rng, kInitStddev);
    layer.qkv_bias = Tensor::zeros({3 * d}, true);
    layer.proj_weight = Tensor::zeros({d, d}, true);
    layer.proj_bias = Tensor::zeros({d}, true);
    layer.ln2_gain = Tensor::full({d}, 1.0, true);
    layer.ln2_bias = Tensor::zeros({d}, true);
    layer.fc_weight = gaussian({d, 4 * d}, rng, kInitStddev);
    layer.fc_bias = Tensor::zeros({4 * d}, true);
    layer.out_weight = Tensor::zeros({4 * d, d}, true);
    layer.out_bias = Tensor::zeros({d}, true);
    p.layers.push_back(std::move(layer));
  }
  p.final_gain = Tensor::full({d}, 1.0, true);
  p.final_bias = Tensor::zeros({d}, true);
  if (!cfg.tied_output) p.lm_head = gaussian({d, v}, rng, kInitStddev);
  p.lm_bias = Tensor::zeros({v}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("position_embedding", position_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    out.emplace_back(p + "ln1_gain", L.ln1_gain);
    out.emplace_back(p + "ln1_bias", L.ln1_bias);
    out.emplace_back(p + "qkv_weight", L.qkv_weight);
    out.emplace_back(p + "qkv_bias", L.qkv_bias);
    out.emplace_back(p + "proj_weight", L.proj_weight);
    out.emplace_back(p + "proj_bias", L.proj_bias);
    out.emplace_back(p + "ln2_gain", L.ln2_gain);
    out.emplace_back(p + "ln2_bias", L.ln2_bias);
    out.emplace_back(p + "fc_weight", L.fc_weight);
    out.emplace_back(p + "fc_bias", L.fc_bias);
    out.emplace_back(p + "out_weight", L.out_weight);
    out.emplace_back(p + "out_bias", L.out_bias);
  }
  out.emplace_back("final_gain", final_gain);
  out.emplace_back("final_bias", final_bias);
  if (lm_head.defined()) out.emplace_back("lm_head", lm_head);
  out.emplace_back("lm_bias", lm_bias);
  return out;
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

void ModelParams::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto t : parameters()) {
    t.set_requires_grad(!frozen);
    t.zero_grad();
  }
}

ModelParams ModelParams::clone() const {
  ModelParams p = *this;
  auto copy = [this](Tensor& t) {
    if (t.defined()) {
      t = t.detach();
      t.set_requires_grad(!frozen_);
    }
  };
  copy(p.token_embedding);
  copy(p.position_embedding);
  for (auto& L : p.layers) {
    for (Tensor* t : {&L.ln1_gain, &L.ln1_bias, &L.qkv_weight, &L.qkv_bias, &L.proj_weight,
                      &L.proj_bias, &L.ln2_gain, &L.ln2_bias, &L.fc_weight, &L.fc_bias,
                      &L.out_weight, &L.out_bias}) {
      copy(*t);
    }
  }
  copy(p.final_gain);
  copy(p.final_bias);
  copy(p.lm_head);
  copy(p.lm_bias);
  return p;
}

void ModelParams::copy_values_from(const ModelParams& other) {
  if (!(other.cfg_ == cfg_)) throw ConfigError("copy_values_from: config mismatch");
  auto dst = parameters();
  auto src = other.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto s = src[i].values();
    std::copy(s.begin(), s.end(), dst[i].mutable_values().begin());
  }
}

Tensor forward(const ModelParams& params, std::span<const int> ids, const SoftPrompt* prompt) {
  const auto& cfg = params.config();
  const std::size_t m = prompt ? prompt->length() : 0;
  const std::size_t total = m + ids.size();
  if (ids.empty()) throw ContractError("forward: empty id sequence");
  if (total > cfg.max_seq_len) {
    throw LengthError("forward: sequence of " + std::to_string(total) +
                      " positions exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  if (m > 0 && prompt->dim() != cfg.d_model) {
    throw DimensionError("forward: prompt width " + std::to_string(prompt->dim()) +
                         " differs from d_model " + std::to_string(cfg.d_model));
  }

  // Prompt rows carry no position; ids keep positions 0..n-1 with or without a prompt.
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = add(embedding_lookup(params.token_embedding, ids),
                 embedding_lookup(params.position_embedding, positions));
  if (m > 0) x = concat_rows(prompt->embeddings, x);

  for (const auto& L : params.layers) {
    Tensor h = layer_norm(x, L.ln1_gain, L.ln1_bias);
    Tensor qkv = add_bias(matmul(h, L.qkv_weight), L.qkv_bias);
    Tensor att = causal_attention(qkv, cfg.n_heads);
    x = add(x, add_bias(matmul(att, L.proj_weight), L.proj_bias));
    h = layer_norm(x, L.ln2_gain, L.ln2_bias);
    Tensor f = gelu(add_bias(matmul(h, L.fc_weight), L.fc_bias));
    x = add(x, add_bias(matmul(f, L.out_weight), L.out_bias));
  }
  Tensor h = layer_norm(x, params.final_gain, params.final_bias);
  Tensor logits = params.lm_head.defined() ? matmul(h, params.lm_head)
                                           : matmul(h, transpose(params.token_embedding));
  return log_softmax(add_bias(logits, params.lm_bias));
}

Tensor response_log_probs(const ModelParams& params, const SoftPrompt* prompt,
                          std::span<const int> request_ids, std::span<const int> response_ids) {
  if (response_ids.empty()) throw ContractError("response_log_probs: empty response");
  if (request_ids.empty()) throw ContractError("response_log_probs: empty request");
  // The final response token is only ever a target, never an input.
  std::vector<int> ids(request_ids.begin(), request_ids.end());
  ids.insert(ids.end(), response_ids.begin(), response_ids.end() - 1);
  const std::size_t m = prompt ? prompt->length() : 0;
  Tensor all = forward(params, ids, prompt);
  return slice_rows(all, m + request_ids.size() - 1, response_ids.size());
}

PromptInit parse_prompt_init(std::string_view name) {
  if (name == "random") return PromptInit::random;
  if (name == "padding") return PromptInit::padding;
  if (name == "text") return PromptInit::text;
  throw ConfigError("unknown prompt init method '" + std::string(name) + "'");
}

std::string_view prompt_init_name(PromptInit method) {
  switch (method) {
    case PromptInit::random: return "random";
    case PromptInit::padding: return "padding";
    case PromptInit::text: return "text";
  }
  return "";
}

SoftPrompt init_prompt(PromptInit method, std::size_t length, std::string_view init_text,
                       const Vocab& vocab, const ModelParams& params, Rng& rng) {
  const std::size_t d = params.config().d_model;
  SoftPrompt prompt;
  if (length == 0) return prompt;
  std::vector<double> rows(length * d);
  auto table = params.token_embedding.values();
  auto copy_row = [&](std::size_t dst, int id) {
    std::copy_n(&table[static_cast<std::size_t>(id) * d], d, &rows[dst * d]);
  };
  switch (method) {
    case PromptInit::random:
      for (auto& v : rows) v = rng.normal(0.0, kRandomPromptStddev);
      break;
    case PromptInit::padding:
      for (std::size_t i = 0; i < length; ++i) copy_row(i, Vocab::kPad);
      break;
    case PromptInit::text: {
      const auto ids = vocab.encode(init_text, true);
      if (ids.empty()) throw ConfigError("init_prompt: init text encodes to no tokens");
      for (std::size_t i = 0; i < length; ++i) copy_row(i, ids[i % ids.size()]);
      break;
    }
  }
  prompt.embeddings = Tensor::from({length, d}, std::move(rows), true);
  return prompt;
}

std::size_t TransformerLM::max_length() const {
  const std::size_t m = prompt_ ? prompt_->length() : 0;
  return params_->config().max_seq_len - std::min(m, params_->config().max_seq_len);
}

std::vector<double> TransformerLM::continuation_log_probs(std::span<const int> request,
                                                          std::span<const int> continuation) const {
  if (request.empty()) throw ContractError("continuation_log_probs: empty request");
  NoGradGuard no_grad;
  std::vector<int> ids(request.begin(), request.end());
  ids.insert(ids.end(), continuation.begin(), continuation.end());
  const std::size_t m = prompt_ ? prompt_->length() : 0;
  Tensor all = forward(*params_, ids, prompt_);
  const std::size_t v = all.cols();
  const std::size_t first = m + request.size() - 1;
  auto vals = all.values();
  return {vals.begin() + static_cast<std::ptrdiff_t>(first * v), vals.end()};
}

std::vector<double> AutoregressiveModel::next_log_probs(std::span<const int> request,
                                                       std::span<const int> continuation) const {
  auto rows = continuation_log_probs(request, continuation);
  const std::size_t v = vocab_size();
  return {rows.end() - static_cast<std::ptrdiff_t>(v), rows.end()};
}

void TransformerLM::reset_cache() const {
  cache_ = KvCache{};
  cache_.k.resize(params_->layers.size());
  cache_.v.resize(params_->layers.size());
  const std::size_t m = prompt_ ? prompt_->length() : 0;
  for (std::size_t i = 0; i < m; ++i) advance(slice_rows(prompt_->embeddings, i, 1));
  cache_.primed = true;
}

// Runs one row (already position-embedded if it is a token) through every
// layer, appending its keys and values.
void TransformerLM::advance(Tensor x) const {
  const auto& cfg = params_->config();
  const std::size_t d = cfg.d_model, heads = cfg.n_heads, hd = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t len = cache_.k.empty() ? 1 : cache_.k[0].size() / d + 1;

  for (std::size_t l = 0; l < params_->layers.size(); ++l) {
    const auto& L = params_->layers[l];
    Tensor h = layer_norm(x, L.ln1_gain, L.ln1_bias);
    const Tensor qkv_t = add_bias(matmul(h, L.qkv_weight), L.qkv_bias);
    auto qkv = qkv_t.values();
    auto& K = cache_.k[l];
    auto& V = cache_.v[l];
    K.insert(K.end(), qkv.begin() + static_cast<std::ptrdiff_t>(d),
             qkv.begin() + static_cast<std::ptrdiff_t>(2 * d));
    V.insert(V.end(), qkv.begin() + static_cast<std::ptrdiff_t>(2 * d), qkv.end());

    // Same summation order as causal_attention.
    std::vector<double> out(d, 0.0), a(len);
    for (std::size_t hh = 0; hh < heads; ++hh) {
      const double* q = &qkv[hh * hd];
      double mx = -INFINITY;
      for (std::size_t j = 0; j < len; ++j) {
        const double* k = &K[j * d + hh * hd];
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += q[e] * k[e];
        a[j] = s * inv;
        mx = std::max(mx, a[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        a[j] = std::exp(a[j] - mx);
        z += a[j];
      }
      double* o = &out[hh * hd];
      for (std::size_t j = 0; j < len; ++j) {
        a[j] /= z;
        const double* vv = &V[j * d + hh * hd];
        for (std::size_t e = 0; e < hd; ++e) o[e] += a[j] * vv[e];
      }
    }
    Tensor att = Tensor::from({1, d}, std::move(out));
    x = add(x, add_bias(matmul(att, L.proj_weight), L.proj_bias));
    h = layer_norm(x, L.ln2_gain, L.ln2_bias);
    Tensor f = gelu(add_bias(matmul(h, L.fc_weight), L.fc_bias));
    x = add(x, add_bias(matmul(f, L.out_weight), L.out_bias));
  }
  Tensor h = layer_norm(x, params_->final_gain, params_->final_bias);
  Tensor logits = params_->lm_head.defined() ? matmul(h, params_->lm_head)
                                             : matmul(h, transpose(params_->token_embedding));
  const Tensor lp = log_softmax(add_bias(logits, params_->lm_bias));
  cache_.last.assign(lp.values().begin(), lp.values().end());
}

std::vector<double> TransformerLM::next_log_probs(std::span<const int> request,
                                                  std::span<const int> continuation) const {
  if (request.empty()) throw ContractError("next_log_probs: empty request");
  NoGradGuard no_grad;
  const std::size_t m = prompt_ ? prompt_->length() : 0;
  const std::size_t n = request.size() + continuation.size();
  if (m + n > params_->config().max_seq_len) {
    throw LengthError("next_log_probs: sequence of " + std::to_string(m + n) +
                      " positions exceeds max_seq_len " +
                      std::to_string(params_->config().max_seq_len));
  }
  if (m > 0 && prompt_->dim() != params_->config().d_model) {
    throw DimensionError("next_log_probs: prompt width differs from d_model");
  }
  auto token = [&](std::size_t i) {
    return i < request.size() ? request[i] : continuation[i - request.size()];
  };

  bool reusable = cache_.primed && cache_.ids.size() <= n && !cache_.ids.empty();
  for (std::size_t i = 0; reusable && i < cache_.ids.size(); ++i) reusable = cache_.ids[i] == token(i);
  if (!reusable) reset_cache();

  for (std::size_t i = cache_.ids.size(); i < n; ++i) {
    const int id = token(i);
    const int pos = static_cast<int>(i);
    advance(add(embedding_lookup(params_->token_embedding, std::span<const int>(&id, 1)),
                embedding_lookup(params_->position_embedding, std::span<const int>(&pos, 1))));
    cache_.ids.push_back(id);
  }
  return cache_.last;
}

}  // namespace promptkd
