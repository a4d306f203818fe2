#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "promptkd/model.hpp"
#include "promptkd/optim.hpp"
#include "promptkd/tensor.hpp"

namespace promptkd {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct NamedAdamState {
  std::string name;
  AdamState state;
};

// Versioned binary container:
//   "PKDCKPT\0" magic, u32 format version, then length-prefixed sections
//   (config key/values, parameter arrays in declared order, optional
//   prompt, optimizer moments, RNG state text, step counter).
// All integers are little-endian u64 unless noted; values are IEEE doubles.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::map<std::string, std::string> config;
  std::vector<NamedArray> arrays;
  std::optional<NamedArray> prompt;
  std::vector<NamedAdamState> optimizer;
  std::string rng_state;
  std::int64_t step = 0;
};

// Writes to <path>.tmp and renames over path.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws IoError / ParseError on missing, truncated or foreign files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::map<std::string, std::string> model_config_entries(const ModelConfig& cfg);
ModelConfig model_config_from_entries(const std::map<std::string, std::string>& entries);

// Captures params (+ optional prompt, optimizer state, rng) at a step.
Checkpoint make_checkpoint(const ModelParams& params, const SoftPrompt* prompt,
                           const AdamW* optimizer, const Rng* rng, std::int64_t step);
// Rebuilds the model recorded in ckpt (not frozen).
ModelParams params_from_checkpoint(const Checkpoint& ckpt);
std::optional<SoftPrompt> prompt_from_checkpoint(const Checkpoint& ckpt);
// Copies stored moments into an optimizer over the same parameter list.
void restore_optimizer(const Checkpoint& ckpt, AdamW& optimizer);

}  // namespace promptkd
