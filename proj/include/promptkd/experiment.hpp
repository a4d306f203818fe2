#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptkd/config.hpp"
#include "promptkd/data.hpp"
#include "promptkd/distill.hpp"
#include "promptkd/vocab.hpp"

namespace promptkd {

// Environment variable naming the directory relative output paths resolve
// against.
inline constexpr const char* kOutputRootEnv = "PROMPTKD_OUTPUT_ROOT";

// --out wins; otherwise output.dir, placed under $PROMPTKD_OUTPUT_ROOT when
// that is set and output.dir is relative.
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg,
                                         const std::string& cli_out);

struct DataSplit {
  std::string name;
  std::vector<InstructionExample> raw;
  std::vector<EncodedExample> encoded;
};

struct ExperimentData {
  std::vector<EncodedExample> train;
  std::vector<DataSplit> validation;  // one per synthetic task, then "jsonl"
};

ExperimentData build_data(const ExperimentConfig& cfg, const Vocab& vocab);

// manifest.json of a run directory: the config hash plus completed stages in
// the order they finished, each with the files it wrote (relative paths).
class RunManifest {
 public:
  struct Stage {
    std::string name;
    std::vector<std::string> outputs;
  };

  // Loads dir/manifest.json or starts an empty one. A stored hash that
  // differs from config_hash throws ConfigError unless reset is set, in
  // which case the old stage list is discarded.
  RunManifest(std::filesystem::path dir, std::string config_hash, bool reset);

  bool completed(std::string_view stage) const;
  // Drops any earlier entry of the same name, appends, and saves.
  void record(std::string stage, std::vector<std::string> outputs);
  void forget(std::string_view stage);

  const std::vector<Stage>& stages() const { return stages_; }
  const std::string& config_hash() const { return hash_; }

  static std::string read_hash(const std::filesystem::path& dir);

 private:
  void save() const;
  std::filesystem::path dir_;
  std::string hash_;
  std::vector<Stage> stages_;
};

// Stage orchestration over one run directory. Every stage is a no-op when
// already recorded in the manifest, unless force is set.
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, std::filesystem::path dir, bool force);

  void train_teacher();
  void warm_start();
  void distill(Method method, std::uint64_t seed);
  void evaluate(Method method, std::uint64_t seed);
  void exposure_bias(Method method, std::uint64_t seed);
  void exposure_progress(Method method, std::uint64_t seed);
  void probe(std::uint64_t seed);
  // Every stage for every method and run seed, then the report under
  // dir/report.
  void run_all();

  const ExperimentConfig& config() const { return cfg_; }
  const ExperimentData& data() const { return data_; }
  const RunManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }

  std::function<void(std::string_view)> log;

  static std::string run_name(Method method, std::uint64_t seed);

 private:
  bool skip(const std::string& stage) const;
  ModelParams load_teacher() const;
  ModelParams load_model(const std::string& rel) const;
  void require(const std::string& stage, const std::string& hint) const;
  void say(const std::string& msg) const;

  ExperimentConfig cfg_;
  std::filesystem::path dir_;
  bool force_;
  Vocab vocab_;
  ExperimentData data_;
  RunManifest manifest_;
};

// Aggregates eval, exposure and probe CSVs of one or more run directories
// into out_dir. Throws AggregationError when the directories were produced
// by different configurations.
std::vector<std::filesystem::path> write_report(std::span<const std::filesystem::path> run_dirs,
                                                const std::filesystem::path& out_dir);

inline constexpr Method kAllMethods[] = {Method::sft, Method::kd, Method::seqkd, Method::gkd,
                                         Method::promptkd};

}  // namespace promptkd
