#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "promptkd/config.hpp"
#include "promptkd/errors.hpp"
#include "promptkd/experiment.hpp"

using namespace promptkd;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSmoke = R"(
data.tasks = copy,reverse
data.train_per_task = 16
data.val_per_task = 4
data.max_input_len = 4
teacher.d_model = 8
teacher.n_layers = 1
teacher.n_heads = 2
teacher.max_seq_len = 64
teacher.steps = 10
student.d_model = 8
student.n_layers = 1
student.n_heads = 2
student.max_seq_len = 64
warmstart.steps = 5
train.steps = 10
train.checkpoint_every = 4
prompt.length = 2
decode.max_new_tokens = 6
eval.seeds = 10,20
eval.every = 5
eval.select_subset = 4
eval.progress_snapshots = 2
run.seeds = 1
exposure.max_steps = 6
exposure.samples = 2
exposure.requests = 3
probe.examples = 4
)";

KeyValueConfig smoke_kv() {
  KeyValueConfig kv;
  kv.parse(kSmoke, "smoke");
  return kv;
}

ExperimentConfig smoke() { return ExperimentConfig::from(smoke_kv()); }

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / "promptkd_experiment_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d.parent_path());
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::set<std::string> files_under(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.insert(fs::relative(e.path(), dir).generic_string());
  return out;
}

std::set<std::string> csv_files(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& f : files_under(dir))
    if (f.size() > 4 && f.substr(f.size() - 4) == ".csv" && f.find("timing") == std::string::npos)
      out.insert(f);
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PROMPTKD_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct ScopedEnv {
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    if (value) setenv(name, value, 1);
    else unsetenv(name);
  }
  ~ScopedEnv() {
    if (old_) setenv(name_, old_->c_str(), 1);
    else unsetenv(name_);
  }
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST(KeyValueConfig, EverySchemaKeyHasADefault) {
  KeyValueConfig kv;
  std::set<std::string> keys;
  for (const auto& k : config_schema()) {
    EXPECT_TRUE(keys.insert(std::string(k.key)).second) << k.key;
    EXPECT_EQ(kv.get(k.key), k.default_value);
    EXPECT_FALSE(k.doc.empty());
  }
  EXPECT_NO_THROW(ExperimentConfig::from(kv));
}

TEST(KeyValueConfig, ParsesCommentsWhitespaceAndLaterWins) {
  KeyValueConfig kv;
  kv.parse("# header\n  train.steps = 7   # trailing\n\ntrain.steps=9\ndata.tasks = copy, sort\n");
  EXPECT_EQ(kv.get_size("train.steps"), 9u);
  EXPECT_EQ(kv.get_list("data.tasks"), (std::vector<std::string>{"copy", "sort"}));
  kv.set_assignment("train.lr=0.5");
  EXPECT_DOUBLE_EQ(kv.get_double("train.lr"), 0.5);
}

TEST(KeyValueConfig, ErrorsNameTheOriginAndLine) {
  KeyValueConfig kv;
  try {
    kv.parse("train.steps = 1\nnot.a.key = 3\n", "my.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("my.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(kv.parse("train.steps\n"), ConfigError);
  EXPECT_THROW(kv.set_assignment("no_equals"), ConfigError);
  kv.set("train.steps", "abc");
  EXPECT_THROW(kv.get_int("train.steps"), ConfigError);
  kv.set("train.regularization", "maybe");
  EXPECT_THROW(kv.get_bool("train.regularization"), ConfigError);
  EXPECT_THROW(kv.load_file("/nonexistent/x.cfg"), IoError);
}

TEST(KeyValueConfig, HashTracksCanonicalText) {
  KeyValueConfig a, b;
  a.parse("train.steps = 3\ntrain.lr = 0.1\n");
  b.parse("train.lr=0.1\ntrain.steps=3\n");
  EXPECT_EQ(a.canonical_text(), b.canonical_text());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  EXPECT_EQ(a.hash().find_first_not_of("0123456789abcdef"), std::string::npos);
  b.set("train.steps", "4");
  EXPECT_NE(a.hash(), b.hash());

  std::string prev;
  std::istringstream lines(a.canonical_text());
  for (std::string line; std::getline(lines, line);) {
    EXPECT_LT(prev, line);
    prev = line;
  }
}

TEST(ExperimentConfig, RejectsInvalidSettings) {
  for (const char* bad : {"data.tasks = copy,nope", "train.steps = 0", "train.lr = 0",
                          "teacher.d_model = 9", "decode.top_p = 1.5", "train.baseline_init = best",
                          "train.kd_direction = sideways", "eval.seeds = ", "run.seeds = x",
                          "prompt.init = zeros", "exposure.max_steps = 0"}) {
    auto kv = smoke_kv();
    kv.set_assignment(bad);
    EXPECT_THROW(ExperimentConfig::from(kv), ConfigError) << bad;
  }
}

TEST(OutputDir, CliThenEnvRootThenConfig) {
  auto cfg = smoke();
  cfg.output_dir = "runs/x";
  {
    ScopedEnv env(kOutputRootEnv, nullptr);
    EXPECT_EQ(resolve_output_dir(cfg, ""), fs::path("runs/x"));
  }
  ScopedEnv env(kOutputRootEnv, "/data/root");
  EXPECT_EQ(resolve_output_dir(cfg, ""), fs::path("/data/root/runs/x"));
  EXPECT_EQ(resolve_output_dir(cfg, "elsewhere"), fs::path("elsewhere"));
  cfg.output_dir = "/abs/run";
  EXPECT_EQ(resolve_output_dir(cfg, ""), fs::path("/abs/run"));
}

TEST(Manifest, KeepsExecutionOrderAndGuardsTheHash) {
  const auto dir = fresh_dir("manifest");
  fs::create_directories(dir);
  {
    RunManifest m(dir, "aaaa", false);
    m.record("one", {"a.csv"});
    m.record("two", {"b.csv"});
    m.record("one", {"a.csv"});
    ASSERT_EQ(m.stages().size(), 2u);
    EXPECT_EQ(m.stages()[0].name, "two");
    EXPECT_EQ(m.stages()[1].name, "one");
  }
  RunManifest again(dir, "aaaa", false);
  EXPECT_TRUE(again.completed("one"));
  EXPECT_FALSE(again.completed("three"));
  EXPECT_EQ(RunManifest::read_hash(dir), "aaaa");
  EXPECT_THROW(RunManifest(dir, "bbbb", false), ConfigError);
  RunManifest reset(dir, "bbbb", true);
  EXPECT_TRUE(reset.stages().empty());
}

TEST(Experiment, DependenciesAndTeacherFreeSft) {
  const auto dir = fresh_dir("deps");
  Experiment ex(smoke(), dir, false);
  EXPECT_THROW(ex.distill(Method::promptkd, 1), DependencyError);
  EXPECT_THROW(ex.distill(Method::kd, 1), DependencyError);
  EXPECT_THROW(ex.evaluate(Method::sft, 1), DependencyError);
  EXPECT_THROW(ex.probe(1), DependencyError);
  EXPECT_NO_THROW(ex.distill(Method::sft, 1));
  EXPECT_TRUE(ex.manifest().completed("distill/sft_s1"));
  EXPECT_FALSE(ex.manifest().completed("train-teacher"));
}

TEST(Experiment, FullRunIsDeterministicCompleteAndIdempotent) {
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  Experiment(smoke(), a, false).run_all();
  Experiment(smoke(), b, false).run_all();
  const auto csvs = csv_files(a);
  EXPECT_GT(csvs.size(), 20u);
  EXPECT_EQ(csvs, csv_files(b));
  for (const auto& f : csvs) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;

  // Every emitted file is listed in the manifest.
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  std::set<std::string> listed;
  for (const auto& f : manifest.at("files")) listed.insert(f.get<std::string>());
  listed.insert("manifest.json");
  EXPECT_EQ(listed, files_under(a));

  // A second pass is a no-op.
  const auto before = fs::last_write_time(a / "runs/promptkd_s1/metrics.csv");
  std::vector<std::string> said;
  Experiment again(smoke(), a, false);
  again.log = [&](std::string_view m) { said.emplace_back(m); };
  again.run_all();
  EXPECT_EQ(fs::last_write_time(a / "runs/promptkd_s1/metrics.csv"), before);
  for (const auto& f : csvs) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;

  // Re-running the report on unchanged inputs is byte-identical.
  const fs::path dirs[] = {a};
  const auto report = fresh_dir("det_report");
  write_report(dirs, report);
  for (const auto& f : files_under(report)) EXPECT_EQ(slurp(report / f), slurp(a / "report" / f)) << f;

  // The coefficient reaches zero only after the last step: first 1, then decreasing.
  const auto metrics = slurp(a / "runs/promptkd_s1/metrics.csv");
  EXPECT_NE(metrics.find("\n0,"), std::string::npos);
}

TEST(Experiment, ResumedDistillationMatchesUninterrupted) {
  const auto whole = fresh_dir("resume_whole"), cut = fresh_dir("resume_cut");
  {
    Experiment ex(smoke(), whole, false);
    ex.train_teacher();
    ex.distill(Method::promptkd, 1);
  }
  {
    Experiment ex(smoke(), cut, false);
    ex.train_teacher();
    ex.warm_start();
    // Abort once the final step has been taken but before the run completes;
    // the last resumable state is step 8.
    ex.log = [](std::string_view m) {
      if (m.find("promptkd_s1 step 10/10") != std::string_view::npos) throw std::runtime_error("abort");
    };
    EXPECT_THROW(ex.distill(Method::promptkd, 1), std::runtime_error);
    EXPECT_TRUE(fs::exists(cut / "runs/promptkd_s1/state.ckpt"));
    EXPECT_FALSE(ex.manifest().completed("distill/promptkd_s1"));
  }
  std::vector<std::string> said;
  Experiment ex(smoke(), cut, false);
  ex.log = [&](std::string_view m) { said.emplace_back(m); };
  ex.distill(Method::promptkd, 1);
  EXPECT_NE(std::find(said.begin(), said.end(), "resuming promptkd_s1 at step 8"), said.end());
  for (const char* f : {"runs/promptkd_s1/metrics.csv", "runs/promptkd_s1/validation.csv",
                        "runs/promptkd_s1/final.ckpt", "runs/promptkd_s1/best.ckpt"}) {
    EXPECT_EQ(slurp(whole / f), slurp(cut / f)) << f;
  }
}

TEST(Experiment, ChangedConfigNeedsForce) {
  const auto dir = fresh_dir("force");
  Experiment(smoke(), dir, false).distill(Method::sft, 1);
  auto kv = smoke_kv();
  kv.set("train.steps", "6");
  EXPECT_THROW(Experiment(ExperimentConfig::from(kv), dir, false), ConfigError);
  Experiment forced(ExperimentConfig::from(kv), dir, true);
  EXPECT_FALSE(forced.manifest().completed("distill/sft_s1"));
  forced.distill(Method::sft, 1);
  EXPECT_EQ(RunManifest::read_hash(dir), kv.hash());
}

TEST(Report, RefusesMixedConfigurations) {
  const auto a = fresh_dir("mix_a"), b = fresh_dir("mix_b");
  Experiment(smoke(), a, false).distill(Method::sft, 1);
  auto kv = smoke_kv();
  kv.set("train.steps", "6");
  Experiment(ExperimentConfig::from(kv), b, false).distill(Method::sft, 1);
  const fs::path dirs[] = {a, b};
  EXPECT_THROW(write_report(dirs, fresh_dir("mix_out")), AggregationError);
}

TEST(Cli, ExitCodesAndSmokeRun) {
  const auto dir = fresh_dir("cli");
  const auto cfg = fresh_dir("cli_cfg.txt");
  std::ofstream(cfg) << kSmoke;
  const std::string common = " --config " + cfg.string() + " --out " + dir.string() + " -q";
  EXPECT_EQ(run_cli("distill --method promptkd" + common), 3);
  EXPECT_EQ(run_cli("distill --method sft --seed 2" + common), 0);
  EXPECT_EQ(run_cli("distill --method nonsense" + common), 2);
  EXPECT_EQ(run_cli("train-teacher --set train.bogus=1" + common), 2);
  EXPECT_EQ(run_cli("train-teacher" + common), 0);
  EXPECT_EQ(run_cli("distill --method promptkd --seed 2" + common), 0);
  EXPECT_EQ(run_cli("eval --method promptkd --seed 2" + common), 0);
  EXPECT_TRUE(fs::exists(dir / "eval/promptkd_s2.csv"));
  EXPECT_EQ(run_cli("train-teacher --set train.steps=3" + common), 2);
  EXPECT_EQ(run_cli("defaults"), 0);

  ScopedEnv env(kOutputRootEnv, dir.string().c_str());
  EXPECT_EQ(run_cli("distill --method sft --seed 1 --config " + cfg.string() +
                    " --set output.dir=nested -q"),
            0);
  EXPECT_TRUE(fs::exists(dir / "nested/runs/sft_s1/final.ckpt"));
}
