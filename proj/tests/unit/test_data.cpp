#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "promptkd/data.hpp"
#include "promptkd/errors.hpp"
#include "promptkd/vocab.hpp"

using namespace promptkd;

namespace {

std::string slurp(const std::string& name) {
  std::ifstream in(std::string(PROMPTKD_FIXTURES) + "/" + name, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Template, MatchesGoldenFixtures) {
  EXPECT_EQ(apply_template({"Reverse the string.", "abc", "cba"}), slurp("template_with_input.txt"));
  EXPECT_EQ(apply_template({"Name a primary color.", "", "red"}), slurp("template_no_input.txt"));
}

TEST(Template, HeadersInOrderAndInputSectionOptional) {
  const auto t = apply_template({"Reverse the string.", "abc", "cba"});
  const auto i = t.find("### Instruction:"), n = t.find("### Input:"), r = t.find("### Response:");
  ASSERT_NE(n, std::string::npos);
  EXPECT_LT(i, n);
  EXPECT_LT(n, r);
  EXPECT_EQ(apply_template({"Do it.", "", "x"}).find("### Input:"), std::string::npos);
  EXPECT_EQ(t.back(), '\n');
}

TEST(Vocab, RoundTripAndAtoms) {
  const auto v = Vocab::standard();
  const std::string text = apply_template({"Sort the letters.", "dcba", "abcd"}) + "abcd";
  const auto ids = v.encode(text);
  EXPECT_EQ(v.decode(ids), text);
  // Each template line is one token.
  EXPECT_EQ(v.encode(std::string(kTemplatePreamble)).size(), 1u);
  EXPECT_EQ(v.encode(std::string(kResponseHeader)).size(), 1u);
}

TEST(Vocab, UnknownCharacters) {
  const auto v = Vocab::standard();
  EXPECT_THROW(v.encode("caf\xc3\xa9", true), EncodingError);
  const auto ids = v.encode("caf\xc3\xa9", false);
  ASSERT_EQ(ids.size(), 4u);
  EXPECT_EQ(ids.back(), Vocab::kUnk);
  EXPECT_EQ(v.decode(ids), "caf");
  EXPECT_THROW(v.id("\xc3\xa9"), IndexError);
}

TEST(Vocab, ValidatesSymbols) {
  EXPECT_THROW(Vocab({"<pad>", "<bos>", "<eos>", "<unk>", "a", "a"}), ConfigError);
  EXPECT_THROW(Vocab({"a", "b"}), ConfigError);
}

TEST(Encode, RequestResponseAndMask) {
  const auto v = Vocab::standard();
  const auto e = encode_example({"Copy the string.", "ab", "ab"}, v);
  EXPECT_EQ(e.request_ids.front(), Vocab::kBos);
  EXPECT_EQ(e.response_ids.back(), Vocab::kEos);
  EXPECT_EQ(e.response_ids.size(), 3u);
  ASSERT_EQ(e.loss_mask.size(), e.request_ids.size() + e.response_ids.size());
  EXPECT_EQ(std::count(e.loss_mask.begin(), e.loss_mask.end(), true), 3);
  EXPECT_TRUE(e.loss_mask.back());
  EXPECT_FALSE(e.loss_mask[e.request_ids.size() - 1]);
  EXPECT_THROW(encode_example({"", "x", "y"}, v), ContractError);
  EXPECT_THROW(encode_example({"x", "", ""}, v), ContractError);
}

TEST(Synthetic, CountsOutputsAndDeterminism) {
  for (auto task : {SyntheticTask::copy, SyntheticTask::reverse, SyntheticTask::sort, SyntheticTask::upper}) {
    const auto a = gen_synthetic(task, 50, 9, 6);
    const auto b = gen_synthetic(task, 50, 9, 6);
    ASSERT_EQ(a.size(), 50u);
    EXPECT_EQ(a, b);
    for (const auto& ex : a) {
      EXPECT_GE(ex.input.size(), 3u);
      EXPECT_LE(ex.input.size(), 6u);
      std::string expect = ex.input;
      if (task == SyntheticTask::reverse) std::reverse(expect.begin(), expect.end());
      if (task == SyntheticTask::sort) std::sort(expect.begin(), expect.end());
      if (task == SyntheticTask::upper) for (auto& c : expect) c = static_cast<char>(c - 'a' + 'A');
      EXPECT_EQ(ex.response, expect);
      EXPECT_EQ(ex.instruction, task_instruction(task));
    }
  }
  EXPECT_NE(gen_synthetic(SyntheticTask::copy, 5, 1, 6), gen_synthetic(SyntheticTask::copy, 5, 2, 6));
  EXPECT_THROW(gen_synthetic(SyntheticTask::copy, 0, 1, 6), ConfigError);
  EXPECT_THROW(gen_synthetic(SyntheticTask::copy, 5, 1, 2), ConfigError);
  EXPECT_THROW(parse_task("shuffle"), ConfigError);
}

TEST(Jsonl, LoadsFixtureWithOutputAlias) {
  const auto r = load_jsonl(std::string(PROMPTKD_FIXTURES) + "/tiny.jsonl");
  ASSERT_EQ(r.examples.size(), 2u);
  EXPECT_EQ(r.examples[1].response, "red");
  EXPECT_EQ(r.examples[1].input, "");
}

TEST(Jsonl, StrictModeNamesTheLine) {
  const std::string path = std::string(PROMPTKD_FIXTURES) + "/malformed_line2.jsonl";
  try {
    load_jsonl(path, true);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  const auto lenient = load_jsonl(path, false);
  EXPECT_EQ(lenient.examples.size(), 2u);
  ASSERT_EQ(lenient.skipped.size(), 1u);
  EXPECT_EQ(lenient.skipped[0].line, 2u);

  std::istringstream bad("{\"input\": \"x\"}\n");
  EXPECT_THROW(parse_jsonl(bad, true), ParseError);
  EXPECT_THROW(load_jsonl("/nonexistent/file.jsonl"), IoError);
}

TEST(Jsonl, EmitParseRoundTrip) {
  std::vector<InstructionExample> xs = {{"Say \"hi\".", "", "hi"}, {"Copy the string.", "a,b\n", "a,b\n"}};
  std::stringstream ss;
  emit_jsonl(ss, xs);
  const auto r = parse_jsonl(ss, true);
  EXPECT_EQ(r.examples, xs);
}

TEST(Split, SizesPartitionAndDeterminism) {
  const auto all = gen_synthetic(SyntheticTask::copy, 100, 3, 8);
  const auto [tr, va] = split_train_val(all, 20, 5);
  EXPECT_EQ(tr.size(), 80u);
  EXPECT_EQ(va.size(), 20u);
  std::multiset<std::string> joined, orig;
  for (const auto& x : tr) joined.insert(x.input);
  for (const auto& x : va) joined.insert(x.input);
  for (const auto& x : all) orig.insert(x.input);
  EXPECT_EQ(joined, orig);
  const auto again = split_train_val(all, 20, 5);
  EXPECT_EQ(again.second, va);
  EXPECT_THROW(split_train_val(all, 101, 5), ConfigError);
}
