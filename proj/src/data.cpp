#include "promptkd/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "promptkd/errors.hpp"
#include "promptkd/rng.hpp"

namespace promptkd {

std::string apply_template(const InstructionExample& ex) {
  std::string out;
  out.reserve(160 + ex.instruction.size() + ex.input.size());
  out += kTemplatePreamble;
  out += kTemplateDirective;
  out += kInstructionHeader;
  out += ex.instruction;
  out += '\n';
  if (!ex.input.empty()) {
    out += kInputHeader;
    out += ex.input;
    out += '\n';
  }
  out += kResponseHeader;
  return out;
}

EncodedExample encode_example(const InstructionExample& ex, const Vocab& vocab, bool strict) {
  if (ex.instruction.empty()) throw ContractError("encode_example: empty instruction");
  if (ex.response.empty()) throw ContractError("encode_example: empty response");
  EncodedExample enc;
  enc.request_ids.push_back(Vocab::kBos);
  auto body = vocab.encode(apply_template(ex), strict);
  enc.request_ids.insert(enc.request_ids.end(), body.begin(), body.end());
  enc.response_ids = vocab.encode(ex.response, strict);
  enc.response_ids.push_back(Vocab::kEos);
  enc.loss_mask.assign(enc.request_ids.size(), false);
  enc.loss_mask.resize(enc.request_ids.size() + enc.response_ids.size(), true);
  return enc;
}

std::string decode(std::span<const int> ids, const Vocab& vocab) { return vocab.decode(ids); }

SyntheticTask parse_task(std::string_view name) {
  if (name == "copy") return SyntheticTask::copy;
  if (name == "reverse") return SyntheticTask::reverse;
  if (name == "sort") return SyntheticTask::sort;
  if (name == "upper") return SyntheticTask::upper;
  throw ConfigError("unknown synthetic task '" + std::string(name) + "'");
}

std::string_view task_name(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::copy: return "copy";
    case SyntheticTask::reverse: return "reverse";
    case SyntheticTask::sort: return "sort";
    case SyntheticTask::upper: return "upper";
  }
  return "";
}

std::string_view task_instruction(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::copy: return "Copy the string.";
    case SyntheticTask::reverse: return "Reverse the string.";
    case SyntheticTask::sort: return "Sort the letters.";
    case SyntheticTask::upper: return "Uppercase the string.";
  }
  return "";
}

std::string task_output(SyntheticTask task, std::string_view input) {
  std::string out(input);
  switch (task) {
    case SyntheticTask::copy: break;
    case SyntheticTask::reverse: std::reverse(out.begin(), out.end()); break;
    case SyntheticTask::sort: std::sort(out.begin(), out.end()); break;
    case SyntheticTask::upper:
      for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      break;
  }
  return out;
}

std::vector<InstructionExample> gen_synthetic(SyntheticTask task, std::size_t count,
                                              std::uint64_t seed, std::size_t max_len) {
  if (count < 1) throw ConfigError("gen_synthetic: count must be >= 1");
  if (max_len < 3) throw ConfigError("gen_synthetic: max_len must be >= 3");
  Rng rng(stream_seed(seed, static_cast<std::uint64_t>(task)));
  std::vector<InstructionExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(3, static_cast<std::int64_t>(max_len)));
    std::string input(len, 'a');
    for (auto& c : input) c = static_cast<char>('a' + rng.uniform_index(26));
    out.push_back({std::string(task_instruction(task)), input, task_output(task, input)});
  }
  return out;
}

namespace {

std::string string_field(const nlohmann::json& rec, const char* key) {
  const auto& v = rec.at(key);
  if (!v.is_string()) throw std::invalid_argument(std::string("field '") + key + "' is not a string");
  return v.get<std::string>();
}

InstructionExample parse_record(const std::string& line) {
  const auto rec = nlohmann::json::parse(line);
  if (!rec.is_object()) throw std::invalid_argument("record is not a JSON object");
  InstructionExample ex;
  if (!rec.contains("instruction")) throw std::invalid_argument("missing field 'instruction'");
  ex.instruction = string_field(rec, "instruction");
  if (rec.contains("input") && !rec.at("input").is_null()) ex.input = string_field(rec, "input");
  if (rec.contains("response")) {
    ex.response = string_field(rec, "response");
  } else if (rec.contains("output")) {
    ex.response = string_field(rec, "output");
  } else {
    throw std::invalid_argument("missing field 'response'");
  }
  if (ex.instruction.empty()) throw std::invalid_argument("empty instruction");
  if (ex.response.empty()) throw std::invalid_argument("empty response");
  return ex;
}

}  // namespace

JsonlResult parse_jsonl(std::istream& in, bool strict) {
  JsonlResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      result.examples.push_back(parse_record(line));
    } catch (const std::exception& e) {
      if (strict) throw ParseError("jsonl line " + std::to_string(lineno) + ": " + e.what());
      result.skipped.push_back({lineno, e.what()});
    }
  }
  return result;
}

JsonlResult load_jsonl(const std::filesystem::path& path, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_jsonl(in, strict);
}

void emit_jsonl(std::ostream& out, std::span<const InstructionExample> examples) {
  for (const auto& ex : examples) {
    nlohmann::ordered_json rec;
    rec["instruction"] = ex.instruction;
    rec["input"] = ex.input;
    rec["response"] = ex.response;
    out << rec.dump() << '\n';
  }
}

void write_jsonl(const std::filesystem::path& path, std::span<const InstructionExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  emit_jsonl(out, examples);
}

std::pair<std::vector<InstructionExample>, std::vector<InstructionExample>> split_train_val(
    std::vector<InstructionExample> examples, std::size_t val_count, std::uint64_t seed) {
  if (val_count > examples.size()) {
    throw ConfigError("split_train_val: validation size exceeds dataset size");
  }
  Rng rng(mix_seed(seed));
  for (std::size_t i = examples.size(); i > 1; --i) {
    std::swap(examples[i - 1], examples[rng.uniform_index(i)]);
  }
  std::vector<InstructionExample> val(examples.begin(),
                                      examples.begin() + static_cast<std::ptrdiff_t>(val_count));
  examples.erase(examples.begin(), examples.begin() + static_cast<std::ptrdiff_t>(val_count));
  return {std::move(examples), std::move(val)};
}

}  // namespace promptkd
