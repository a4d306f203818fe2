#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptkd/vocab.hpp"

namespace promptkd {

struct InstructionExample {
  std::string instruction;
  std::string input;  // may be empty
  std::string response;

  bool operator==(const InstructionExample&) const = default;
};

// Template lines. Each is also a single vocabulary atom.
inline constexpr std::string_view kTemplatePreamble =
    "Below is an instruction that describes a task.\n";
inline constexpr std::string_view kTemplateDirective =
    "Write a response that appropriately completes the request.\n";
inline constexpr std::string_view kInstructionHeader = "### Instruction:\n";
inline constexpr std::string_view kInputHeader = "### Input:\n";
inline constexpr std::string_view kResponseHeader = "### Response:\n";

// Renders the instruction-following request. The "### Input:" section is
// omitted when the input is empty. Ends with the response header line.
std::string apply_template(const InstructionExample& ex);

struct EncodedExample {
  std::vector<int> request_ids;   // <bos> + templated request, length n
  std::vector<int> response_ids;  // response + <eos>, length T
  std::vector<bool> loss_mask;    // over request ++ response; true on the T response slots

  std::size_t request_length() const { return request_ids.size(); }
  std::size_t response_length() const { return response_ids.size(); }
};

// Throws ContractError for an empty instruction or response.
EncodedExample encode_example(const InstructionExample& ex, const Vocab& vocab,
                              bool strict = true);
std::string decode(std::span<const int> ids, const Vocab& vocab);

enum class SyntheticTask { copy, reverse, sort, upper };

SyntheticTask parse_task(std::string_view name);
std::string_view task_name(SyntheticTask task);
std::string_view task_instruction(SyntheticTask task);
std::string task_output(SyntheticTask task, std::string_view input);

// Deterministic given seed. Inputs are lowercase strings of length
// 3..max_len. Throws ConfigError for count < 1 or max_len < 3.
std::vector<InstructionExample> gen_synthetic(SyntheticTask task, std::size_t count,
                                              std::uint64_t seed, std::size_t max_len);

struct JsonlIssue {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct JsonlResult {
  std::vector<InstructionExample> examples;
  std::vector<JsonlIssue> skipped;
};

// Reads instruction/input/response records (output is accepted as an alias
// of response). strict: the first malformed line throws ParseError naming
// its line number; otherwise malformed lines are skipped and reported.
JsonlResult load_jsonl(const std::filesystem::path& path, bool strict = true);
JsonlResult parse_jsonl(std::istream& in, bool strict = true);
void emit_jsonl(std::ostream& out, std::span<const InstructionExample> examples);
void write_jsonl(const std::filesystem::path& path, std::span<const InstructionExample> examples);

// Seeded shuffle, then the first val_count items become the validation split.
std::pair<std::vector<InstructionExample>, std::vector<InstructionExample>> split_train_val(
    std::vector<InstructionExample> examples, std::size_t val_count, std::uint64_t seed);

}  // namespace promptkd
