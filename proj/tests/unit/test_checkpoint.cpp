#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <cstring>
#include <iterator>

#include "dign/checkpoint.hpp"
#include "dign/ops.hpp"
#include "oracles.hpp"

using namespace dign;
using TD = Tensor<double>;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<double> values(const TD& t) { return {t.data().begin(), t.data().end()}; }

GeneratorConfig small_config() { return GeneratorConfig::standard(32, {1, 16}); }

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteStable) {
  const auto dir = oracle::temp_dir("ckpt_stable");
  Generator<double> gen(small_config(), 1);
  // Move running statistics off their defaults.
  gen.forward(oracle::random({2, 3, 32, 32}, 2, 0, 1), TD::full({2, 1, 32, 32}, 1.0), Mode::kTrain);
  save_checkpoint(gen, dir + "/a.dgck");
  auto loaded = load_checkpoint<double>(dir + "/a.dgck");
  save_checkpoint(loaded, dir + "/b.dgck");
  EXPECT_EQ(slurp(dir + "/a.dgck"), slurp(dir + "/b.dgck"));
  EXPECT_EQ(loaded.weight_digest(), gen.weight_digest());
  EXPECT_FALSE(std::filesystem::exists(dir + "/a.dgck.tmp"));
}

TEST(Checkpoint, InpaintIsBitwiseIdenticalAfterReload) {
  const auto dir = oracle::temp_dir("ckpt_inpaint");
  Generator<float> gen(small_config(), 3);
  save_checkpoint(gen, dir + "/g.dgck");
  auto loaded = load_checkpoint<float>(dir + "/g.dgck", small_config());
  auto img = tensor_new<float>({1, 3, 32, 32}, fill::Uniform{0, 1}, 4);
  auto mask = Tensor<float>::full({1, 1, 32, 32}, 1.0f);
  for (std::size_t i = 100; i < 400; ++i) mask.mutable_data()[i] = 0.0f;
  auto a = inpaint(gen, img, mask), b = inpaint(loaded, img, mask);
  EXPECT_EQ(0, std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)));
}

TEST(Checkpoint, RejectsOtherConfiguration) {
  const auto dir = oracle::temp_dir("ckpt_mismatch");
  Generator<double> gen(small_config(), 5);
  save_checkpoint(gen, dir + "/g.dgck");
  EXPECT_THROW(load_checkpoint<double>(dir + "/g.dgck", GeneratorConfig::standard(32, {1, 8})), IncompatibleError);
  Generator<double> other(GeneratorConfig::standard(32, {1, 8}), 5);
  EXPECT_THROW(restore(other, read_checkpoint_file<double>(dir + "/g.dgck")), IncompatibleError);
}

TEST(Checkpoint, TruncationIsParseErrorAndLeavesTargetUntouched) {
  const auto dir = oracle::temp_dir("ckpt_trunc");
  Generator<double> gen(small_config(), 6);
  save_checkpoint(gen, dir + "/g.dgck");
  const std::string bytes = slurp(dir + "/g.dgck");
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    std::ofstream(dir + "/t.dgck", std::ios::binary) << bytes.substr(0, cut);
    EXPECT_THROW(read_checkpoint_file<double>(dir + "/t.dgck"), ParseError) << cut;
    EXPECT_THROW(load_checkpoint<double>(dir + "/t.dgck"), ParseError) << cut;
  }
  std::ofstream(dir + "/x.dgck", std::ios::binary) << bytes << 'x';
  EXPECT_THROW(read_checkpoint_file<double>(dir + "/x.dgck"), ParseError);

  // A file with one tensor misshapen is rejected before anything is copied.
  Generator<double> target(small_config(), 7);
  const auto before = target.weight_digest();
  auto file = snapshot(gen);
  file.tensors.back().second = TD::zeros({1, 1, 1, 1});
  EXPECT_THROW(restore(target, file), IncompatibleError);
  EXPECT_EQ(target.weight_digest(), before);
  auto missing = snapshot(gen);
  missing.tensors.pop_back();
  EXPECT_THROW(restore(target, missing), IncompatibleError);
  EXPECT_EQ(target.weight_digest(), before);
}

TEST(Checkpoint, FileFieldsRoundTrip) {
  const auto dir = oracle::temp_dir("ckpt_fields");
  CheckpointFile<float> f;
  f.config_text = "resolution = 32\n";
  f.digest = 0x1234;
  f.iteration = 77;
  f.optimizer_step = 76;
  f.tensors.push_back({"a", Tensor<float>::full({1, 2, 1, 1}, 0.5f)});
  f.tensors.push_back({"b.c", Tensor<float>::full({1, 1, 1, 3}, -1.0f)});
  write_checkpoint_file(dir + "/f.dgck", f);
  auto g = read_checkpoint_file<float>(dir + "/f.dgck");
  EXPECT_EQ(g.config_text, f.config_text);
  EXPECT_EQ(g.digest, f.digest);
  EXPECT_EQ(g.iteration, 77u);
  EXPECT_EQ(g.optimizer_step, 76u);
  ASSERT_EQ(g.tensors.size(), 2u);
  EXPECT_EQ(g.find("b.c").shape(), (Shape{1, 1, 1, 3}));
  EXPECT_FALSE(g.find("zzz").defined());
  EXPECT_EQ(slurp(dir + "/f.dgck").substr(0, 4), "DGCK");
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(read_checkpoint_file<double>("/nonexistent/dir/none.dgck"), IoError);
}
