#include "promptkd/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "promptkd/errors.hpp"

namespace promptkd {

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"data.tasks", "copy,reverse,sort,upper", "synthetic tasks, comma separated; empty for JSONL only"},
      {"data.train_per_task", "2000", "training examples generated per task"},
      {"data.val_per_task", "200", "validation examples generated per task"},
      {"data.max_input_len", "8", "longest synthetic input string (>= 3)"},
      {"data.seed", "1", "seed for generation and the train/validation split"},
      {"data.jsonl_train", "", "optional JSONL training file (instruction/input/response)"},
      {"data.jsonl_val", "", "optional JSONL validation file"},
      {"data.strict", "true", "fail on malformed JSONL lines or out-of-vocabulary text"},

      {"teacher.d_model", "128", "teacher width"},
      {"teacher.n_layers", "4", "teacher depth"},
      {"teacher.n_heads", "4", "teacher attention heads"},
      {"teacher.max_seq_len", "128", "teacher context length, prompt included"},
      {"teacher.seed", "11", "teacher initialisation seed"},
      {"teacher.tied_output", "false", "tie the teacher output projection to its token embedding"},
      {"teacher.steps", "20000", "teacher SFT steps"},
      {"teacher.batch_size", "8", "teacher SFT batch size"},
      {"teacher.lr", "0.001", "teacher SFT learning rate"},

      {"student.d_model", "64", "student width"},
      {"student.n_layers", "2", "student depth"},
      {"student.n_heads", "2", "student attention heads"},
      {"student.max_seq_len", "128", "student context length"},
      {"student.seed", "23", "student initialisation seed"},
      {"student.tied_output", "false", "tie the student output projection"},

      {"warmstart.steps", "1000", "student SFT steps before distillation"},
      {"warmstart.batch_size", "8", "warm-start batch size"},
      {"warmstart.lr", "0.001", "warm-start learning rate"},

      {"train.steps", "5000", "distillation steps K"},
      {"train.batch_size", "8", "distillation batch size"},
      {"train.lr", "0.0002", "learning rate for prompt and student"},
      {"train.weight_decay", "0", "AdamW decoupled weight decay"},
      {"train.kd_direction", "reverse", "L_kd direction: reverse or forward"},
      {"train.reg_direction", "reverse", "L_reg direction: reverse or forward"},
      {"train.student_direction", "reverse", "L_student direction: reverse or forward"},
      {"train.regularization", "true", "include the decaying L_reg term"},
      {"train.baseline_init", "warmstart", "start of sft/kd/seqkd students: warmstart or init"},
      {"train.checkpoint_every", "500", "steps between resumable checkpoints"},

      {"prompt.init", "text", "soft prompt initialisation: random, padding or text"},
      {"prompt.length", "7", "number of soft prompt rows m"},
      {"prompt.text", "Suppose you are a student.", "initialisation sentence for text init"},

      {"decode.temperature", "1.0", "sampling temperature"},
      {"decode.top_k", "0", "top-k filter, 0 disables"},
      {"decode.top_p", "1.0", "nucleus mass in (0, 1]"},
      {"decode.max_new_tokens", "16", "longest sampled response"},

      {"eval.seeds", "10,20,30,40,50", "sampling seeds for ROUGE-L evaluation"},
      {"eval.every", "500", "steps between validation passes for best-checkpoint selection"},
      {"eval.select_subset", "64", "validation examples per dataset used for selection"},
      {"eval.progress_snapshots", "10", "evenly spaced student snapshots for training-progress analysis"},

      {"run.seeds", "1,2,3", "distillation seeds"},
      {"run.methods", "sft,kd,seqkd,gkd,promptkd", "methods run by 'all' and selected by --method all"},

      {"exposure.max_steps", "50", "generation steps L"},
      {"exposure.samples", "4", "sampled prefixes per request and generator"},
      {"exposure.requests", "64", "validation requests per dataset used for ExAccErr"},

      {"probe.examples", "200", "examples per split for the prompted-teacher probe"},

      {"output.dir", "runs/default", "run directory (relative to PROMPTKD_OUTPUT_ROOT when set)"},
  };
  return schema;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig::KeyValueConfig() {
  for (const auto& k : config_schema()) values_.emplace(std::string(k.key), std::string(k.default_value));
}

void KeyValueConfig::set(std::string_view key, std::string_view value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second = std::string(trim(value));
}

void KeyValueConfig::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void KeyValueConfig::parse(std::string_view text, std::string_view origin) {
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    try {
      set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void KeyValueConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  parse(ss.str(), path.string());
}

const std::string& KeyValueConfig::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::int64_t KeyValueConfig::get_int(std::string_view key) const {
  const auto& s = get(key);
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw ConfigError("config key '" + std::string(key) + "': '" + s + "' is not an integer");
  }
  return v;
}

std::size_t KeyValueConfig::get_size(std::string_view key) const {
  const auto v = get_int(key);
  if (v < 0) throw ConfigError("config key '" + std::string(key) + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

double KeyValueConfig::get_double(std::string_view key) const {
  const auto& s = get(key);
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw ConfigError("config key '" + std::string(key) + "': '" + s + "' is not a number");
  }
  return v;
}

bool KeyValueConfig::get_bool(std::string_view key) const {
  const auto& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "': '" + s + "' is not a boolean");
}

std::vector<std::string> KeyValueConfig::get_list(std::string_view key) const {
  std::vector<std::string> out;
  std::string_view s = get(key);
  while (!s.empty()) {
    const auto comma = s.find(',');
    auto item = trim(s.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    s = s.substr(comma + 1);
  }
  return out;
}

std::string KeyValueConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string KeyValueConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

ModelConfig model_section(const KeyValueConfig& kv, const std::string& p, std::size_t vocab) {
  ModelConfig m;
  m.vocab_size = vocab;
  m.d_model = kv.get_size(p + ".d_model");
  m.n_layers = kv.get_size(p + ".n_layers");
  m.n_heads = kv.get_size(p + ".n_heads");
  m.max_seq_len = kv.get_size(p + ".max_seq_len");
  m.seed = static_cast<std::uint64_t>(kv.get_int(p + ".seed"));
  m.tied_output = kv.get_bool(p + ".tied_output");
  m.validate();
  return m;
}

std::vector<std::uint64_t> seed_list(const KeyValueConfig& kv, std::string_view key) {
  std::vector<std::uint64_t> out;
  for (const auto& s : kv.get_list(key)) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
      throw ConfigError("config key '" + std::string(key) + "': bad seed '" + s + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("config key '" + std::string(key) + "' needs at least one seed");
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from(const KeyValueConfig& kv) {
  ExperimentConfig c;
  c.raw = kv;
  for (const auto& t : kv.get_list("data.tasks")) c.tasks.push_back(parse_task(t));
  c.train_per_task = kv.get_size("data.train_per_task");
  c.val_per_task = kv.get_size("data.val_per_task");
  c.max_input_len = kv.get_size("data.max_input_len");
  c.data_seed = static_cast<std::uint64_t>(kv.get_int("data.seed"));
  c.jsonl_train = kv.get("data.jsonl_train");
  c.jsonl_val = kv.get("data.jsonl_val");
  c.strict_data = kv.get_bool("data.strict");
  if (c.tasks.empty() && c.jsonl_train.empty()) {
    throw ConfigError("config: no synthetic tasks and no JSONL training file");
  }
  if (!c.tasks.empty() && (c.train_per_task == 0 || c.val_per_task == 0)) {
    throw ConfigError("config: synthetic tasks need positive train/val counts");
  }

  const std::size_t vocab = Vocab::standard().size();
  c.teacher = model_section(kv, "teacher", vocab);
  c.student = model_section(kv, "student", vocab);

  c.teacher_steps = kv.get_size("teacher.steps");
  c.teacher_batch = kv.get_size("teacher.batch_size");
  c.teacher_lr = kv.get_double("teacher.lr");
  c.warmstart_steps = kv.get_size("warmstart.steps");
  c.warmstart_batch = kv.get_size("warmstart.batch_size");
  c.warmstart_lr = kv.get_double("warmstart.lr");
  c.checkpoint_every = kv.get_size("train.checkpoint_every");
  if (c.teacher_batch == 0 || c.warmstart_batch == 0) throw ConfigError("config: batch sizes must be >= 1");
  if (!(c.teacher_lr > 0.0) || !(c.warmstart_lr > 0.0)) throw ConfigError("config: learning rates must be positive");

  c.train.total_steps = kv.get_size("train.steps");
  c.train.batch_size = kv.get_size("train.batch_size");
  c.train.learning_rate = kv.get_double("train.lr");
  c.train.weight_decay = kv.get_double("train.weight_decay");
  c.train.kd_direction = parse_direction(kv.get("train.kd_direction"));
  c.train.reg_direction = parse_direction(kv.get("train.reg_direction"));
  c.train.student_direction = parse_direction(kv.get("train.student_direction"));
  c.train.use_regularization = kv.get_bool("train.regularization");
  c.train.validate();
  const auto& init = kv.get("train.baseline_init");
  if (init != "init" && init != "warmstart") {
    throw ConfigError("config: train.baseline_init must be init or warmstart");
  }
  c.baselines_from_warmstart = init == "warmstart";

  c.prompt_init = parse_prompt_init(kv.get("prompt.init"));
  c.prompt_length = kv.get_size("prompt.length");
  c.prompt_text = kv.get("prompt.text");

  c.decode.temperature = kv.get_double("decode.temperature");
  c.decode.top_k = kv.get_size("decode.top_k");
  c.decode.top_p = kv.get_double("decode.top_p");
  c.decode.max_new_tokens = kv.get_size("decode.max_new_tokens");
  c.decode.validate();

  c.eval_seeds = seed_list(kv, "eval.seeds");
  c.eval_every = kv.get_size("eval.every");
  c.select_subset = kv.get_size("eval.select_subset");
  c.progress_snapshots = kv.get_size("eval.progress_snapshots");
  c.run_seeds = seed_list(kv, "run.seeds");
  for (const auto& m : kv.get_list("run.methods")) c.run_methods.push_back(parse_method(m));
  if (c.run_methods.empty()) throw ConfigError("config: run.methods needs at least one method");

  c.exposure_steps = kv.get_size("exposure.max_steps");
  c.exposure_samples = kv.get_size("exposure.samples");
  c.exposure_requests = kv.get_size("exposure.requests");
  if (c.exposure_steps == 0 || c.exposure_samples == 0 || c.exposure_requests == 0) {
    throw ConfigError("config: exposure settings must be positive");
  }
  c.probe_examples = kv.get_size("probe.examples");
  c.output_dir = kv.get("output.dir");
  return c;
}

}  // namespace promptkd
