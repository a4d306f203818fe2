#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "promptkd/checkpoint.hpp"
#include "promptkd/distill.hpp"
#include "promptkd/errors.hpp"

using namespace promptkd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "promptkd_ckpt_tests";
  fs::create_directories(dir);
  return dir / name;
}

ModelConfig tiny() {
  ModelConfig c;
  c.vocab_size = 11;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.max_seq_len = 20;
  c.seed = 9;
  return c;
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

std::vector<EncodedExample> toy_data() {
  std::vector<EncodedExample> out;
  for (int i = 0; i < 6; ++i) {
    EncodedExample e;
    e.request_ids = {1, 4 + i % 3, 5};
    e.response_ids = {6 + i % 4, 7, 2};
    e.loss_mask.assign(6, false);
    for (std::size_t j = 3; j < 6; ++j) e.loss_mask[j] = true;
    out.push_back(e);
  }
  return out;
}

bool same_values(const ModelParams& a, const ModelParams& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!std::equal(pa[i].values().begin(), pa[i].values().end(), pb[i].values().begin(),
                    pb[i].values().end()))
      return false;
  }
  return true;
}

}  // namespace

TEST(Checkpoint, RoundTripsEverySection) {
  auto params = ModelParams::init(tiny());
  SoftPrompt prompt{Tensor::from({3, 8}, std::vector<double>(24, 0.25), true)};
  AdamW opt(params.parameters(), AdamWConfig{});
  Rng rng(77);
  rng.normal();
  auto ckpt = make_checkpoint(params, &prompt, &opt, &rng, 42);
  const auto path = scratch("roundtrip.ckpt");
  save_checkpoint(path, ckpt);
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));

  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.step, 42);
  EXPECT_EQ(back.config, ckpt.config);
  EXPECT_EQ(back.rng_state, ckpt.rng_state);
  ASSERT_EQ(back.arrays.size(), ckpt.arrays.size());
  for (std::size_t i = 0; i < back.arrays.size(); ++i) {
    EXPECT_EQ(back.arrays[i].name, ckpt.arrays[i].name);
    EXPECT_EQ(back.arrays[i].shape, ckpt.arrays[i].shape);
    EXPECT_EQ(back.arrays[i].values, ckpt.arrays[i].values);
  }
  ASSERT_TRUE(back.prompt.has_value());
  EXPECT_EQ(back.prompt->values, std::vector<double>(24, 0.25));
  EXPECT_EQ(back.optimizer.size(), ckpt.optimizer.size());

  const auto rebuilt = params_from_checkpoint(back);
  EXPECT_EQ(rebuilt.config(), params.config());
  EXPECT_TRUE(same_values(rebuilt, params));
  const auto p = prompt_from_checkpoint(back);
  ASSERT_TRUE(p.has_value());
  EXPECT_EQ(p->length(), 3u);

  Rng restored(0);
  restored.set_state(back.rng_state);
  EXPECT_EQ(restored.next_u64(), rng.next_u64());
}

TEST(Checkpoint, RejectsForeignTruncatedAndPaddedFiles) {
  const auto params = ModelParams::init(tiny());
  const auto path = scratch("good.ckpt");
  save_checkpoint(path, make_checkpoint(params, nullptr, nullptr, nullptr, 0));
  const auto good = bytes_of(path);

  EXPECT_THROW(load_checkpoint(scratch("missing.ckpt")), IoError);

  auto bad = good;
  bad[0] = 'X';
  write_bytes(scratch("magic.ckpt"), bad);
  EXPECT_THROW(load_checkpoint(scratch("magic.ckpt")), ParseError);

  bad = good;
  bad[8] = 7;  // format version
  write_bytes(scratch("version.ckpt"), bad);
  EXPECT_THROW(load_checkpoint(scratch("version.ckpt")), ParseError);

  for (std::size_t cut : {good.size() / 3, good.size() / 2, good.size() - 1}) {
    write_bytes(scratch("cut.ckpt"), {good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut)});
    EXPECT_THROW(load_checkpoint(scratch("cut.ckpt")), ParseError) << cut;
  }

  bad = good;
  bad.push_back('\0');
  write_bytes(scratch("padded.ckpt"), bad);
  EXPECT_THROW(load_checkpoint(scratch("padded.ckpt")), ParseError);
}

TEST(Checkpoint, ResumedTrainingMatchesUninterrupted) {
  const auto data = toy_data();
  TrainConfig cfg;
  cfg.method = Method::sft;
  cfg.total_steps = 10;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.01;
  cfg.seed = 3;
  DecodeConfig dc;

  auto straight = ModelParams::init(tiny());
  {
    Trainer t(nullptr, straight, nullptr, data, cfg, dc);
    while (!t.done()) t.step();
  }

  auto first = ModelParams::init(tiny());
  const auto path = scratch("resume.ckpt");
  {
    Trainer t(nullptr, first, nullptr, data, cfg, dc);
    for (int i = 0; i < 4; ++i) t.step();
    save_checkpoint(path, make_checkpoint(first, nullptr, &t.student_optimizer(), nullptr,
                                          t.current_step()));
  }
  const auto ckpt = load_checkpoint(path);
  auto resumed = params_from_checkpoint(ckpt);
  Trainer t(nullptr, resumed, nullptr, data, cfg, dc);
  restore_optimizer(ckpt, t.student_optimizer());
  t.set_step(ckpt.step);
  while (!t.done()) t.step();
  EXPECT_TRUE(same_values(resumed, straight));
  EXPECT_THROW(t.set_step(2), ContractError);
}
