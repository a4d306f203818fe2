#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "promptkd/data.hpp"
#include "promptkd/distill.hpp"
#include "promptkd/model.hpp"
#include "promptkd/sampler.hpp"

namespace promptkd {

struct ConfigKey {
  std::string_view key;
  std::string_view default_value;
  std::string_view doc;
};

// Every recognised key with its default and a one-line description.
const std::vector<ConfigKey>& config_schema();

// Flat dotted-key configuration, e.g.
//
//   # comment
//   teacher.d_model = 128
//   data.tasks = copy,reverse
//
// Unknown keys are rejected; later assignments win.
class KeyValueConfig {
 public:
  // All keys at their defaults.
  KeyValueConfig();

  void parse(std::string_view text, std::string_view origin = "<string>");
  void load_file(const std::filesystem::path& path);
  // Accepts "key=value".
  void set_assignment(std::string_view assignment);
  void set(std::string_view key, std::string_view value);

  const std::string& get(std::string_view key) const;
  std::int64_t get_int(std::string_view key) const;
  std::size_t get_size(std::string_view key) const;
  double get_double(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  std::vector<std::string> get_list(std::string_view key) const;

  // Sorted "key = value" lines; the exact text written into a run directory.
  std::string canonical_text() const;
  // FNV-1a 64 of canonical_text(), as 16 hex digits.
  std::string hash() const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

struct ExperimentConfig {
  // data
  std::vector<SyntheticTask> tasks;
  std::size_t train_per_task = 0;
  std::size_t val_per_task = 0;
  std::size_t max_input_len = 0;
  std::uint64_t data_seed = 0;
  std::string jsonl_train;
  std::string jsonl_val;
  bool strict_data = true;

  ModelConfig teacher;
  ModelConfig student;

  std::size_t teacher_steps = 0;
  std::size_t teacher_batch = 0;
  double teacher_lr = 0.0;
  std::size_t warmstart_steps = 0;
  std::size_t warmstart_batch = 0;
  double warmstart_lr = 0.0;
  std::size_t checkpoint_every = 0;

  TrainConfig train;           // method and seed are filled per run
  bool baselines_from_warmstart = false;

  PromptInit prompt_init = PromptInit::text;
  std::size_t prompt_length = 0;
  std::string prompt_text;

  DecodeConfig decode;  // pseudo-targets and evaluation sampling
  std::vector<std::uint64_t> eval_seeds;
  std::size_t eval_every = 0;
  std::size_t select_subset = 0;
  std::size_t progress_snapshots = 0;

  std::vector<std::uint64_t> run_seeds;
  std::vector<Method> run_methods;

  std::size_t exposure_steps = 0;
  std::size_t exposure_samples = 0;
  std::size_t exposure_requests = 0;

  std::size_t probe_examples = 0;

  std::string output_dir;

  KeyValueConfig raw;

  // Validates and converts; throws ConfigError.
  static ExperimentConfig from(const KeyValueConfig& kv);
};

}  // namespace promptkd
