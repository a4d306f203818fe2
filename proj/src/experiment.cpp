#include "promptkd/experiment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "promptkd/checkpoint.hpp"
#include "promptkd/errors.hpp"
#include "promptkd/eval.hpp"

namespace promptkd {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSplitStream = 0x5911;
constexpr std::uint64_t kPromptInitStream = 0x9a;
constexpr std::uint64_t kSelectStream = 0x5e1;
constexpr std::uint64_t kExposureStream = 0xe8;

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw ParseError("csv: missing column '" + std::string(name) + "'");
  }
};

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

Csv read_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  Csv csv;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty csv");
  csv.header = split_commas(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_commas(line);
    if (row.size() != csv.header.size()) {
      throw ParseError(path.string() + ": row width differs from header");
    }
    csv.rows.push_back(std::move(row));
  }
  return csv;
}

std::string csv_text(const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

double to_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  return std::stod(s);
}

// Keeps the header and the rows whose step column satisfies keep(step).
void truncate_csv(const fs::path& path, const std::function<bool(std::int64_t)>& keep) {
  if (!fs::exists(path)) return;
  Csv csv = read_csv(path);
  const auto col = csv.column("step");
  std::vector<std::vector<std::string>> kept;
  for (auto& r : csv.rows) {
    if (keep(std::stoll(r[col]))) kept.push_back(std::move(r));
  }
  write_text(path, csv_text(csv.header, kept));
}

void append_line(const fs::path& path, const std::string& header, const std::string& line) {
  const bool fresh = !fs::exists(path);
  if (fresh) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  if (fresh) out << header << '\n';
  out << line << '\n';
}

std::vector<EncodedExample> encode_all(std::span<const InstructionExample> xs, const Vocab& vocab,
                                       bool strict) {
  std::vector<EncodedExample> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(encode_example(x, vocab, strict));
  return out;
}

// Evenly spaced picks, at most n.
std::vector<EncodedExample> spread(std::span<const EncodedExample> xs, std::size_t n) {
  std::vector<EncodedExample> out;
  if (xs.empty() || n == 0) return out;
  n = std::min(n, xs.size());
  for (std::size_t i = 0; i < n; ++i) out.push_back(xs[i * xs.size() / n]);
  return out;
}

// The first n of every split, interleaved so each split is represented.
std::vector<EncodedExample> pooled(const std::vector<DataSplit>& splits, std::size_t n) {
  std::vector<EncodedExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (const auto& s : splits) {
      if (i < s.encoded.size()) {
        out.push_back(s.encoded[i]);
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

// Student optimizer moments first, then the prompt's (named "prompt").
Checkpoint training_state(const ModelParams& student, const SoftPrompt* prompt, AdamW& student_opt,
                          AdamW* prompt_opt, std::int64_t step) {
  Checkpoint c = make_checkpoint(student, prompt, &student_opt, nullptr, step);
  if (prompt_opt) {
    for (const auto& s : prompt_opt->states()) c.optimizer.push_back({"prompt", s});
  }
  return c;
}

void restore_training_state(const Checkpoint& c, ModelParams& student, SoftPrompt* prompt,
                            AdamW& student_opt, AdamW* prompt_opt) {
  student.copy_values_from(params_from_checkpoint(c));
  Checkpoint own = c;
  const std::size_t ns = student_opt.states().size();
  if (own.optimizer.size() < ns) throw ParseError("training state: optimizer entries missing");
  own.optimizer.resize(ns);
  restore_optimizer(own, student_opt);
  if (prompt_opt) {
    if (!c.prompt || !prompt) throw ParseError("training state: prompt missing");
    auto vals = prompt->embeddings.mutable_values();
    if (vals.size() != c.prompt->values.size()) throw ParseError("training state: prompt size mismatch");
    std::copy(c.prompt->values.begin(), c.prompt->values.end(), vals.begin());
    Checkpoint rest;
    rest.optimizer.assign(c.optimizer.begin() + static_cast<std::ptrdiff_t>(ns), c.optimizer.end());
    restore_optimizer(rest, *prompt_opt);
  }
}

constexpr const char* kMetricsHeader = "step,loss_kd,loss_reg,coefficient,loss_prompt,loss_student";

std::string metrics_line(const StepRecord& r) {
  return std::to_string(r.step) + "," + num(r.loss_kd) + "," + num(r.loss_reg) + "," +
         num(r.coefficient) + "," + num(r.loss_prompt) + "," + num(r.loss_student);
}

// Drives a trainer to completion. Resumes from dir/state.ckpt when present;
// after_step(k) runs once k steps are done, before the resumable state for
// k is written.
void run_loop(Trainer& tr, ModelParams& student, SoftPrompt* prompt, const fs::path& dir,
              std::size_t checkpoint_every, bool fresh,
              const std::function<void(std::int64_t)>& after_step,
              const std::function<void(std::string_view)>& say) {
  const fs::path state = dir / "state.ckpt";
  const fs::path metrics = dir / "metrics.csv";
  const fs::path timing = dir / "timing.csv";
  AdamW* popt = tr.prompt_optimizer();
  if (fresh) {
    fs::remove(state);
    fs::remove(metrics);
    fs::remove(timing);
  } else if (fs::exists(state)) {
    const auto c = load_checkpoint(state);
    restore_training_state(c, student, prompt, tr.student_optimizer(), popt);
    tr.set_step(c.step);
    truncate_csv(metrics, [&](std::int64_t s) { return s < c.step; });
    truncate_csv(timing, [&](std::int64_t s) { return s < c.step; });
    say("resuming " + dir.filename().string() + " at step " + std::to_string(c.step));
  } else {
    fs::remove(metrics);
    fs::remove(timing);
  }
  const auto total = static_cast<std::int64_t>(tr.config().total_steps);
  while (!tr.done()) {
    const auto rec = tr.step();
    append_line(metrics, kMetricsHeader, metrics_line(rec));
    append_line(timing, "step,wall_seconds", std::to_string(rec.step) + "," + num(rec.wall_seconds));
    const auto k = tr.current_step();
    if (after_step) after_step(k);
    if (checkpoint_every > 0 && k % static_cast<std::int64_t>(checkpoint_every) == 0 && k < total) {
      save_checkpoint(state, training_state(student, prompt, tr.student_optimizer(), popt, k));
    }
    if (k % 100 == 0 || k == total) {
      say(dir.filename().string() + " step " + std::to_string(k) + "/" + std::to_string(total) +
          " loss " + num(rec.loss_student));
    }
  }
  fs::remove(state);
}

std::string rel(const fs::path& p, const fs::path& base) {
  return fs::relative(p, base).generic_string();
}

}  // namespace

fs::path resolve_output_dir(const ExperimentConfig& cfg, const std::string& cli_out) {
  if (!cli_out.empty()) return cli_out;
  fs::path p = cfg.output_dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root && p.is_relative()) {
    return fs::path(root) / p;
  }
  return p;
}

ExperimentData build_data(const ExperimentConfig& cfg, const Vocab& vocab) {
  ExperimentData d;
  for (auto task : cfg.tasks) {
    auto all = gen_synthetic(task, cfg.train_per_task + cfg.val_per_task, cfg.data_seed,
                             cfg.max_input_len);
    auto [train, val] = split_train_val(std::move(all), cfg.val_per_task,
                                        stream_seed(cfg.data_seed, kSplitStream + static_cast<std::uint64_t>(task)));
    auto enc = encode_all(train, vocab, cfg.strict_data);
    d.train.insert(d.train.end(), enc.begin(), enc.end());
    DataSplit s;
    s.name = std::string(task_name(task));
    s.encoded = encode_all(val, vocab, cfg.strict_data);
    s.raw = std::move(val);
    d.validation.push_back(std::move(s));
  }
  if (!cfg.jsonl_train.empty()) {
    auto r = load_jsonl(cfg.jsonl_train, cfg.strict_data);
    auto enc = encode_all(r.examples, vocab, cfg.strict_data);
    d.train.insert(d.train.end(), enc.begin(), enc.end());
  }
  if (!cfg.jsonl_val.empty()) {
    auto r = load_jsonl(cfg.jsonl_val, cfg.strict_data);
    DataSplit s;
    s.name = "jsonl";
    s.encoded = encode_all(r.examples, vocab, cfg.strict_data);
    s.raw = std::move(r.examples);
    if (!s.encoded.empty()) d.validation.push_back(std::move(s));
  }
  if (d.train.empty()) throw ConfigError("no training examples");
  if (d.validation.empty()) throw ConfigError("no validation examples");
  return d;
}

// ---------------------------------------------------------------- manifest

RunManifest::RunManifest(fs::path dir, std::string config_hash, bool reset)
    : dir_(std::move(dir)), hash_(std::move(config_hash)) {
  const fs::path path = dir_ / "manifest.json";
  if (!fs::exists(path)) return;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const std::string stored = j.value("config_hash", "");
  if (stored != hash_) {
    if (!reset) {
      throw ConfigError(dir_.string() + " holds a run with config hash " + stored +
                        ", current config hashes to " + hash_ + " (use --force to overwrite)");
    }
    return;
  }
  for (const auto& s : j.at("stages")) {
    stages_.push_back({s.at("name").get<std::string>(), s.at("outputs").get<std::vector<std::string>>()});
  }
}

std::string RunManifest::read_hash(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  try {
    return nlohmann::json::parse(read_text(path)).at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

bool RunManifest::completed(std::string_view stage) const {
  return std::any_of(stages_.begin(), stages_.end(), [&](const Stage& s) { return s.name == stage; });
}

void RunManifest::forget(std::string_view stage) {
  std::erase_if(stages_, [&](const Stage& s) { return s.name == stage; });
  save();
}

void RunManifest::record(std::string stage, std::vector<std::string> outputs) {
  std::erase_if(stages_, [&](const Stage& s) { return s.name == stage; });
  stages_.push_back({std::move(stage), std::move(outputs)});
  save();
}

void RunManifest::save() const {
  nlohmann::ordered_json j;
  j["config_hash"] = hash_;
  j["version"] = PROMPTKD_VERSION;
  j["stages"] = nlohmann::ordered_json::array();
  std::set<std::string> files{"config.txt", "manifest.json"};
  for (const auto& s : stages_) {
    j["stages"].push_back({{"name", s.name}, {"outputs", s.outputs}});
    files.insert(s.outputs.begin(), s.outputs.end());
  }
  j["files"] = std::vector<std::string>(files.begin(), files.end());
  write_text(dir_ / "manifest.json", j.dump(2) + "\n");
}

// -------------------------------------------------------------- experiment

Experiment::Experiment(ExperimentConfig cfg, fs::path dir, bool force)
    : cfg_(std::move(cfg)),
      dir_(std::move(dir)),
      force_(force),
      vocab_(Vocab::standard()),
      data_(build_data(cfg_, vocab_)),
      manifest_(dir_, cfg_.raw.hash(), force) {
  fs::create_directories(dir_);
  write_text(dir_ / "config.txt", cfg_.raw.canonical_text());
}

std::string Experiment::run_name(Method method, std::uint64_t seed) {
  return std::string(method_name(method)) + "_s" + std::to_string(seed);
}

void Experiment::say(const std::string& msg) const {
  if (log) log(msg);
}

bool Experiment::skip(const std::string& stage) const {
  if (force_ || !manifest_.completed(stage)) return false;
  say(stage + ": already complete");
  return true;
}

void Experiment::require(const std::string& stage, const std::string& hint) const {
  if (!manifest_.completed(stage)) {
    throw DependencyError("stage '" + stage + "' has not been run in " + dir_.string() + "; " + hint);
  }
}

ModelParams Experiment::load_model(const std::string& relpath) const {
  return params_from_checkpoint(load_checkpoint(dir_ / relpath));
}

ModelParams Experiment::load_teacher() const {
  require("train-teacher", "run train-teacher first");
  ModelParams t = load_model("teacher/model.ckpt");
  t.set_frozen(true);
  return t;
}

void Experiment::train_teacher() {
  const std::string stage = "train-teacher";
  if (skip(stage)) return;
  const fs::path d = dir_ / "teacher";
  fs::create_directories(d);
  ModelParams teacher = ModelParams::init(cfg_.teacher);
  if (cfg_.teacher_steps > 0) {
    TrainConfig tc;
    tc.method = Method::sft;
    tc.total_steps = cfg_.teacher_steps;
    tc.batch_size = cfg_.teacher_batch;
    tc.learning_rate = cfg_.teacher_lr;
    tc.weight_decay = cfg_.train.weight_decay;
    tc.seed = cfg_.teacher.seed;
    Trainer tr(nullptr, teacher, nullptr, data_.train, tc, cfg_.decode);
    run_loop(tr, teacher, nullptr, d, cfg_.checkpoint_every, force_, {},
             [this](std::string_view m) { say(std::string(m)); });
  }
  save_checkpoint(d / "model.ckpt", make_checkpoint(teacher, nullptr, nullptr, nullptr,
                                                    static_cast<std::int64_t>(cfg_.teacher_steps)));
  std::vector<std::string> outs{"teacher/model.ckpt"};
  if (cfg_.teacher_steps > 0) {
    outs.push_back("teacher/metrics.csv");
    outs.push_back("teacher/timing.csv");
  }
  manifest_.record(stage, outs);
}

void Experiment::warm_start() {
  const std::string stage = "warm-start";
  if (skip(stage)) return;
  const fs::path d = dir_ / "warmstart";
  fs::create_directories(d);
  ModelParams student = ModelParams::init(cfg_.student);
  if (cfg_.warmstart_steps > 0) {
    TrainConfig tc;
    tc.method = Method::sft;
    tc.total_steps = cfg_.warmstart_steps;
    tc.batch_size = cfg_.warmstart_batch;
    tc.learning_rate = cfg_.warmstart_lr;
    tc.weight_decay = cfg_.train.weight_decay;
    tc.seed = cfg_.student.seed;
    Trainer tr(nullptr, student, nullptr, data_.train, tc, cfg_.decode);
    run_loop(tr, student, nullptr, d, cfg_.checkpoint_every, force_, {},
             [this](std::string_view m) { say(std::string(m)); });
  }
  save_checkpoint(d / "model.ckpt", make_checkpoint(student, nullptr, nullptr, nullptr,
                                                    static_cast<std::int64_t>(cfg_.warmstart_steps)));
  std::vector<std::string> outs{"warmstart/model.ckpt"};
  if (cfg_.warmstart_steps > 0) {
    outs.push_back("warmstart/metrics.csv");
    outs.push_back("warmstart/timing.csv");
  }
  manifest_.record(stage, outs);
}

void Experiment::distill(Method method, std::uint64_t seed) {
  const std::string name = run_name(method, seed);
  const std::string stage = "distill/" + name;
  if (skip(stage)) return;

  std::optional<ModelParams> teacher;
  if (method != Method::sft) teacher = load_teacher();
  const bool from_warm = method == Method::promptkd || method == Method::gkd ||
                         cfg_.baselines_from_warmstart;
  ModelParams student;
  if (from_warm) {
    if (!manifest_.completed("warm-start")) warm_start();
    student = load_model("warmstart/model.ckpt");
  } else {
    student = ModelParams::init(cfg_.student);
  }
  std::optional<SoftPrompt> prompt;
  if (method == Method::promptkd) {
    Rng r(stream_seed(seed, kPromptInitStream));
    prompt = init_prompt(cfg_.prompt_init, cfg_.prompt_length, cfg_.prompt_text, vocab_, *teacher, r);
  }
  SoftPrompt* pp = prompt ? &*prompt : nullptr;

  const fs::path d = dir_ / "runs" / name;
  fs::create_directories(d / "progress");
  TrainConfig tc = cfg_.train;
  tc.method = method;
  tc.seed = seed;
  Trainer tr(teacher ? &*teacher : nullptr, student, pp, data_.train, tc, cfg_.decode);

  const auto select = pooled(data_.validation, cfg_.select_subset);
  const std::uint64_t select_seed[] = {stream_seed(seed, kSelectStream)};
  const auto K = static_cast<std::int64_t>(tc.total_steps);
  const fs::path validation = d / "validation.csv";
  double best = -1.0;
  const bool fresh = force_;
  if (fresh) {
    fs::remove(validation);
    fs::remove(d / "best.ckpt");
  } else if (fs::exists(d / "state.ckpt")) {
    const auto step = load_checkpoint(d / "state.ckpt").step;
    truncate_csv(validation, [&](std::int64_t s) { return s <= step; });
    if (fs::exists(validation)) {
      const auto csv = read_csv(validation);
      for (const auto& r : csv.rows) best = std::max(best, to_double(r[csv.column("rouge_f")]));
    }
  } else {
    fs::remove(validation);
    fs::remove(d / "best.ckpt");
  }

  std::vector<std::int64_t> snaps;
  for (std::size_t i = 1; i <= cfg_.progress_snapshots; ++i) {
    const auto n = static_cast<std::int64_t>(cfg_.progress_snapshots);
    snaps.push_back(std::max<std::int64_t>(1, (K * static_cast<std::int64_t>(i) + n / 2) / n));
  }
  std::vector<std::string> outs;
  auto snap_name = [](std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "snap_%02zu.ckpt", i);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < snaps.size(); ++i) {
    outs.push_back(rel(d / "progress" / snap_name(i + 1), dir_));
  }

  auto after = [&](std::int64_t k) {
    const bool periodic = cfg_.eval_every > 0 && k % static_cast<std::int64_t>(cfg_.eval_every) == 0;
    if ((periodic || k == K) && !select.empty()) {
      const double f = evaluate_rouge(student, nullptr, select, vocab_, cfg_.decode, select_seed).mean_f;
      append_line(validation, "step,rouge_f", std::to_string(k) + "," + num(f));
      if (f > best) {
        best = f;
        save_checkpoint(d / "best.ckpt", make_checkpoint(student, pp, nullptr, nullptr, k));
      }
    }
    for (std::size_t i = 0; i < snaps.size(); ++i) {
      if (snaps[i] == k) {
        save_checkpoint(d / "progress" / snap_name(i + 1), make_checkpoint(student, pp, nullptr, nullptr, k));
      }
    }
  };
  run_loop(tr, student, pp, d, cfg_.checkpoint_every, fresh, after,
           [this](std::string_view m) { say(std::string(m)); });
  save_checkpoint(d / "final.ckpt", make_checkpoint(student, pp, nullptr, nullptr, K));
  if (!fs::exists(d / "best.ckpt")) {
    save_checkpoint(d / "best.ckpt", make_checkpoint(student, pp, nullptr, nullptr, K));
  }
  for (const char* f : {"final.ckpt", "best.ckpt", "metrics.csv", "timing.csv"}) {
    outs.push_back(rel(d / f, dir_));
  }
  if (fs::exists(validation)) outs.push_back(rel(validation, dir_));
  manifest_.record(stage, outs);
}

void Experiment::evaluate(Method method, std::uint64_t seed) {
  const std::string name = run_name(method, seed);
  const std::string stage = "eval/" + name;
  if (skip(stage)) return;
  require("distill/" + name, "run distill first");
  const ModelParams student = load_model("runs/" + name + "/best.ckpt");
  std::vector<std::vector<std::string>> rows;
  for (const auto& split : data_.validation) {
    const auto r = evaluate_rouge(student, nullptr, split.encoded, vocab_, cfg_.decode, cfg_.eval_seeds);
    for (std::size_t i = 0; i < cfg_.eval_seeds.size(); ++i) {
      rows.push_back({std::string(method_name(method)), split.name, std::to_string(seed),
                      std::to_string(cfg_.eval_seeds[i]), num(r.per_seed_f[i])});
    }
    say(stage + " " + split.name + " rouge_l " + num(r.mean_f));
  }
  const std::string out = "eval/" + name + ".csv";
  write_text(dir_ / out, csv_text({"method", "dataset", "run_seed", "seed", "rouge_f"}, rows));
  manifest_.record(stage, {out});
}

namespace {

std::vector<std::vector<int>> exposure_requests(const ExperimentData& data, std::size_t n) {
  std::vector<std::vector<int>> reqs;
  for (const auto& ex : pooled(data.validation, n)) reqs.push_back(ex.request_ids);
  return reqs;
}

}  // namespace

void Experiment::exposure_bias(Method method, std::uint64_t seed) {
  const std::string name = run_name(method, seed);
  const std::string stage = "exposure-bias/" + name;
  if (skip(stage)) return;
  require("distill/" + name, "run distill first");
  const ModelParams teacher = load_teacher();
  const ModelParams student = load_model("runs/" + name + "/best.ckpt");
  ExposureBiasConfig ec;
  ec.max_steps = cfg_.exposure_steps;
  ec.n_samples = cfg_.exposure_samples;
  ec.seed = stream_seed(seed, kExposureStream);
  const auto reqs = exposure_requests(data_, cfg_.exposure_requests);
  const auto rep = exaccerr(TransformerLM(teacher), TransformerLM(student), reqs, ec);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t l = 0; l < rep.r.size(); ++l) {
    rows.push_back({std::string(method_name(method)), std::to_string(seed), std::to_string(l + 1),
                    num(rep.r[l]), num(rep.e[l]), num(rep.r_stderr[l]), num(rep.e_stderr[l]),
                    num(rep.exaccerr[l])});
  }
  const std::string out = "exposure/" + name + ".csv";
  write_text(dir_ / out, csv_text({"method", "run_seed", "l", "r", "e", "r_stderr", "e_stderr", "exaccerr"}, rows));
  say(stage + " ExAccErr(" + std::to_string(rep.r.size()) + ") = " + num(rep.exaccerr.back()) + "%");
  manifest_.record(stage, {out});
}

void Experiment::exposure_progress(Method method, std::uint64_t seed) {
  const std::string name = run_name(method, seed);
  const std::string stage = "exposure-progress/" + name;
  if (skip(stage)) return;
  require("distill/" + name, "run distill first");
  const ModelParams teacher = load_teacher();
  ExposureBiasConfig ec;
  ec.max_steps = cfg_.exposure_steps;
  ec.n_samples = cfg_.exposure_samples;
  ec.seed = stream_seed(seed, kExposureStream);
  const auto reqs = exposure_requests(data_, cfg_.exposure_requests);
  const double K = static_cast<double>(cfg_.train.total_steps);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 1; i <= cfg_.progress_snapshots; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "snap_%02zu.ckpt", i);
    const auto ckpt = load_checkpoint(dir_ / "runs" / name / "progress" / buf);
    const ModelParams student = params_from_checkpoint(ckpt);
    const auto rep = exaccerr(TransformerLM(teacher), TransformerLM(student), reqs, ec);
    rows.push_back({std::string(method_name(method)), std::to_string(seed), std::to_string(i),
                    std::to_string(ckpt.step), num(static_cast<double>(ckpt.step) / K),
                    num(rep.r.back()), num(rep.e.back()), num(rep.exaccerr.back())});
  }
  const std::string out = "exposure/" + name + "_progress.csv";
  write_text(dir_ / out, csv_text({"method", "run_seed", "snapshot", "step", "fraction", "r", "e", "exaccerr"}, rows));
  manifest_.record(stage, {out});
}

void Experiment::probe(std::uint64_t seed) {
  const std::string name = run_name(Method::promptkd, seed);
  const std::string stage = "probe/s" + std::to_string(seed);
  if (skip(stage)) return;
  require("distill/" + name, "run distill --method promptkd first");
  require("warm-start", "run distill --method promptkd first");
  const ModelParams teacher = load_teacher();
  const auto final_ckpt = load_checkpoint(dir_ / "runs" / name / "final.ckpt");
  const ModelParams s_final = params_from_checkpoint(final_ckpt);
  const auto prompt = prompt_from_checkpoint(final_ckpt);
  const ModelParams s_init = load_model("warmstart/model.ckpt");

  const auto seen = spread(data_.train, cfg_.probe_examples);
  const auto unseen = pooled(data_.validation, (cfg_.probe_examples + data_.validation.size() - 1) /
                                                   data_.validation.size());
  const ProbeSplit splits[] = {{"seen", seen}, {"unseen", unseen}};
  const auto rows = prompted_kl_probe(teacher, prompt ? &*prompt : nullptr, s_init, s_final, splits,
                                      vocab_, cfg_.decode, cfg_.eval_seeds);
  std::vector<std::vector<std::string>> out_rows;
  for (const auto& r : rows) {
    out_rows.push_back({std::to_string(seed), r.split, r.prompted ? "p+P" : "p", num(r.kl_initial),
                        num(r.kl_final), num(r.rouge_f)});
  }
  const std::string out = "probe/s" + std::to_string(seed) + ".csv";
  write_text(dir_ / out, csv_text({"run_seed", "split", "teacher", "kl_initial", "kl_final", "rouge_f"}, out_rows));
  manifest_.record(stage, {out});
}

void Experiment::run_all() {
  train_teacher();
  warm_start();
  for (auto seed : cfg_.run_seeds) {
    for (auto m : cfg_.run_methods) {
      distill(m, seed);
      evaluate(m, seed);
      exposure_bias(m, seed);
      exposure_progress(m, seed);
    }
    probe(seed);
  }
  const fs::path dirs[] = {dir_};
  std::vector<std::string> outs;
  for (const auto& p : write_report(dirs, dir_ / "report")) outs.push_back(rel(p, dir_));
  manifest_.record("report", std::move(outs));
}

// ------------------------------------------------------------------ report

namespace {

struct Stats {
  std::vector<double> xs;
  void add(double x) {
    if (!std::isnan(x)) xs.push_back(x);
  }
  double mean() const {
    if (xs.empty()) return std::nan("");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
  }
  double stddev() const {
    if (xs.size() < 2) return 0.0;
    const double m = mean();
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
  }
};

int method_rank(const std::string& m) {
  for (std::size_t i = 0; i < std::size(kAllMethods); ++i) {
    if (method_name(kAllMethods[i]) == m) return static_cast<int>(i);
  }
  return static_cast<int>(std::size(kAllMethods));
}

struct MethodOrder {
  bool operator()(const std::string& a, const std::string& b) const {
    const int ra = method_rank(a), rb = method_rank(b);
    return ra != rb ? ra < rb : a < b;
  }
};

std::vector<fs::path> csvs_in(const fs::path& dir, bool progress) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.path().extension() != ".csv") continue;
    const bool is_progress = name.find("_progress") != std::string::npos;
    if (is_progress == progress) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<fs::path> write_report(std::span<const fs::path> run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw AggregationError("report: no run directories");
  std::string hash;
  for (const auto& d : run_dirs) {
    const auto h = RunManifest::read_hash(d);
    if (hash.empty()) {
      hash = h;
    } else if (h != hash) {
      throw AggregationError("report: " + d.string() + " has config hash " + h + ", expected " + hash);
    }
  }

  // method -> dataset -> run_seed -> per-sample-seed scores
  std::map<std::string, std::map<std::string, std::map<std::string, Stats>>, MethodOrder> rouge;
  std::map<std::string, std::map<long, Stats>, MethodOrder> by_length;
  std::map<std::string, std::map<std::string, Stats>, MethodOrder> progress;
  std::map<std::pair<std::string, std::string>, std::array<Stats, 3>> probe;

  for (const auto& d : run_dirs) {
    for (const auto& f : csvs_in(d / "eval", false)) {
      const auto csv = read_csv(f);
      const auto cm = csv.column("method"), cd = csv.column("dataset"), cs = csv.column("run_seed"),
                 cf = csv.column("rouge_f");
      for (const auto& r : csv.rows) rouge[r[cm]][r[cd]][r[cs]].add(to_double(r[cf]));
    }
    for (const auto& f : csvs_in(d / "exposure", false)) {
      const auto csv = read_csv(f);
      const auto cm = csv.column("method"), cl = csv.column("l"), ce = csv.column("exaccerr");
      for (const auto& r : csv.rows) by_length[r[cm]][std::stol(r[cl])].add(to_double(r[ce]));
    }
    for (const auto& f : csvs_in(d / "exposure", true)) {
      const auto csv = read_csv(f);
      const auto cm = csv.column("method"), cf = csv.column("fraction"), ce = csv.column("exaccerr");
      for (const auto& r : csv.rows) progress[r[cm]][r[cf]].add(to_double(r[ce]));
    }
    for (const auto& f : csvs_in(d / "probe", false)) {
      const auto csv = read_csv(f);
      const auto cs = csv.column("split"), ct = csv.column("teacher"), ci = csv.column("kl_initial"),
                 cf = csv.column("kl_final"), cr = csv.column("rouge_f");
      for (const auto& r : csv.rows) {
        auto& st = probe[{r[cs], r[ct]}];
        st[0].add(to_double(r[ci]));
        st[1].add(to_double(r[cf]));
        st[2].add(to_double(r[cr]));
      }
    }
  }

  std::vector<fs::path> written;
  auto emit = [&](const std::string& file, const std::vector<std::string>& header,
                  const std::vector<std::vector<std::string>>& rows) {
    write_text(out_dir / file, csv_text(header, rows));
    written.push_back(out_dir / file);
  };

  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [method, datasets] : rouge) {
      std::map<std::string, Stats> avg_by_seed;
      for (const auto& [dataset, seeds] : datasets) {
        Stats run_means, all;
        for (const auto& [seed, st] : seeds) {
          run_means.add(st.mean());
          for (double x : st.xs) all.add(x);
          avg_by_seed[seed].add(st.mean());
        }
        rows.push_back({method, dataset, std::to_string(run_means.xs.size()), std::to_string(all.xs.size()),
                        num(all.mean()), num(run_means.stddev())});
      }
      Stats avg;
      for (const auto& [seed, st] : avg_by_seed) avg.add(st.mean());
      rows.push_back({method, "average", std::to_string(avg.xs.size()), "", num(avg.mean()), num(avg.stddev())});
    }
    emit("rouge_l.csv", {"method", "dataset", "n_runs", "n_scores", "rouge_f_mean", "rouge_f_std"}, rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [method, ls] : by_length) {
      for (const auto& [l, st] : ls) {
        rows.push_back({method, std::to_string(l), std::to_string(st.xs.size()), num(st.mean()), num(st.stddev())});
      }
    }
    emit("exaccerr_by_length.csv", {"method", "l", "n_runs", "exaccerr_mean", "exaccerr_std"}, rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [method, fr] : progress) {
      std::vector<std::pair<double, const Stats*>> sorted;
      for (const auto& [f, st] : fr) sorted.emplace_back(to_double(f), &st);
      std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      for (const auto& [f, st] : sorted) {
        rows.push_back({method, num(f), std::to_string(st->xs.size()), num(st->mean()), num(st->stddev())});
      }
    }
    emit("exaccerr_progress.csv", {"method", "fraction", "n_runs", "exaccerr_mean", "exaccerr_std"}, rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [key, st] : probe) {
      rows.push_back({key.first, key.second, std::to_string(st[0].xs.size()), num(st[0].mean()),
                      num(st[1].mean()), num(st[2].mean())});
    }
    emit("probe.csv", {"split", "teacher", "n_runs", "kl_initial", "kl_final", "rouge_f"}, rows);
  }
  return written;
}

}  // namespace promptkd
