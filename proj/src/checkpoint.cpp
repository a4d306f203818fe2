#include "promptkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "promptkd/errors.hpp"

namespace promptkd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'K', 'D', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  void array(const NamedArray& a) {
    str(a.name);
    u64(a.shape.size());
    for (auto d : a.shape) u64(d);
    doubles(a.values);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}
  std::uint64_t u64() {
    std::uint64_t v = 0;
    read(&v, sizeof v);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  std::string str() {
    const auto n = bounded(u64());
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  std::vector<double> doubles() {
    const auto n = bounded(u64());
    std::vector<double> v(n);
    read(v.data(), n * sizeof(double));
    return v;
  }
  NamedArray array() {
    NamedArray a;
    a.name = str();
    const auto rank = bounded(u64());
    for (std::size_t i = 0; i < rank; ++i) a.shape.push_back(u64());
    a.values = doubles();
    if (shape_numel(a.shape) != a.values.size()) fail("array '" + a.name + "' shape mismatch");
    return a;
  }
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }
  [[noreturn]] void fail(const std::string& what) {
    throw ParseError("checkpoint " + origin_ + ": " + what);
  }

 private:
  std::size_t bounded(std::uint64_t n) {
    if (n > (1ULL << 34)) fail("implausible length field");
    return static_cast<std::size_t>(n);
  }
  std::istream& in_;
  std::string origin_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = Checkpoint::kFormatVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    Writer w(out);
    w.u64(ckpt.config.size());
    for (const auto& [k, v] : ckpt.config) {
      w.str(k);
      w.str(v);
    }
    w.u64(ckpt.arrays.size());
    for (const auto& a : ckpt.arrays) w.array(a);
    w.u64(ckpt.prompt ? 1 : 0);
    if (ckpt.prompt) w.array(*ckpt.prompt);
    w.u64(ckpt.optimizer.size());
    for (const auto& s : ckpt.optimizer) {
      w.str(s.name);
      w.i64(s.state.step);
      w.doubles(s.state.m);
      w.doubles(s.state.v);
    }
    w.str(ckpt.rng_state);
    w.i64(ckpt.step);
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("bad magic");
  std::uint32_t version = 0;
  r.read(&version, sizeof version);
  if (version != Checkpoint::kFormatVersion) {
    r.fail("unsupported format version " + std::to_string(version));
  }
  Checkpoint c;
  for (auto n = r.u64(); n > 0; --n) {
    auto k = r.str();
    c.config[k] = r.str();
  }
  for (auto n = r.u64(); n > 0; --n) c.arrays.push_back(r.array());
  if (r.u64() != 0) c.prompt = r.array();
  for (auto n = r.u64(); n > 0; --n) {
    NamedAdamState s;
    s.name = r.str();
    s.state.step = r.i64();
    s.state.m = r.doubles();
    s.state.v = r.doubles();
    c.optimizer.push_back(std::move(s));
  }
  c.rng_state = r.str();
  c.step = r.i64();
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return c;
}

std::map<std::string, std::string> model_config_entries(const ModelConfig& cfg) {
  return {
      {"model.vocab_size", std::to_string(cfg.vocab_size)},
      {"model.d_model", std::to_string(cfg.d_model)},
      {"model.n_layers", std::to_string(cfg.n_layers)},
      {"model.n_heads", std::to_string(cfg.n_heads)},
      {"model.max_seq_len", std::to_string(cfg.max_seq_len)},
      {"model.seed", std::to_string(cfg.seed)},
      {"model.tied_output", cfg.tied_output ? "true" : "false"},
  };
}

ModelConfig model_config_from_entries(const std::map<std::string, std::string>& entries) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = entries.find(key);
    if (it == entries.end()) throw ParseError("checkpoint config lacks '" + key + "'");
    return it->second;
  };
  ModelConfig cfg;
  try {
    cfg.vocab_size = std::stoul(get("model.vocab_size"));
    cfg.d_model = std::stoul(get("model.d_model"));
    cfg.n_layers = std::stoul(get("model.n_layers"));
    cfg.n_heads = std::stoul(get("model.n_heads"));
    cfg.max_seq_len = std::stoul(get("model.max_seq_len"));
    cfg.seed = std::stoull(get("model.seed"));
  } catch (const std::logic_error& e) {
    throw ParseError(std::string("checkpoint config: bad integer: ") + e.what());
  }
  cfg.tied_output = get("model.tied_output") == "true";
  cfg.validate();
  return cfg;
}

Checkpoint make_checkpoint(const ModelParams& params, const SoftPrompt* prompt,
                           const AdamW* optimizer, const Rng* rng, std::int64_t step) {
  Checkpoint c;
  c.config = model_config_entries(params.config());
  const auto named = params.named_parameters();
  for (const auto& [name, t] : named) {
    c.arrays.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
  }
  if (prompt && prompt->length() > 0) {
    const auto& e = prompt->embeddings;
    c.prompt = NamedArray{"prompt", e.shape(), {e.values().begin(), e.values().end()}};
  }
  if (optimizer) {
    const auto& ps = optimizer->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      std::string name = "param." + std::to_string(i);
      for (const auto& [n, t] : named) {
        if (t.node() == ps[i].node()) name = n;
      }
      if (prompt && prompt->embeddings.defined() && ps[i].node() == prompt->embeddings.node()) {
        name = "prompt";
      }
      c.optimizer.push_back({name, optimizer->states()[i]});
    }
  }
  if (rng) c.rng_state = rng->state();
  c.step = step;
  return c;
}

ModelParams params_from_checkpoint(const Checkpoint& ckpt) {
  ModelParams p = ModelParams::init(model_config_from_entries(ckpt.config));
  const auto named = p.named_parameters();
  if (named.size() != ckpt.arrays.size()) {
    throw ParseError("checkpoint holds " + std::to_string(ckpt.arrays.size()) +
                     " arrays, model declares " + std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto [name, t] = named[i];
    const auto& a = ckpt.arrays[i];
    if (a.name != name || a.shape != t.shape()) {
      throw ParseError("checkpoint array " + std::to_string(i) + " is '" + a.name + "' " +
                       shape_string(a.shape) + ", expected '" + name + "' " +
                       shape_string(t.shape()));
    }
    std::copy(a.values.begin(), a.values.end(), t.mutable_values().begin());
  }
  return p;
}

std::optional<SoftPrompt> prompt_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.prompt) return std::nullopt;
  SoftPrompt p;
  p.embeddings = Tensor::from(ckpt.prompt->shape, ckpt.prompt->values, true);
  return p;
}

void restore_optimizer(const Checkpoint& ckpt, AdamW& optimizer) {
  auto& states = optimizer.states();
  if (ckpt.optimizer.size() != states.size()) {
    throw ParseError("checkpoint optimizer state count does not match optimizer");
  }
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto& s = ckpt.optimizer[i].state;
    const auto n = optimizer.params()[i].numel();
    if ((!s.m.empty() && s.m.size() != n) || s.m.size() != s.v.size()) {
      throw ParseError("checkpoint optimizer state '" + ckpt.optimizer[i].name + "' size mismatch");
    }
    states[i] = s;
  }
}

}  // namespace promptkd
