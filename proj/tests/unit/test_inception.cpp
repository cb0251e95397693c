#include <gtest/gtest.h>

#include "dign/inception.hpp"
#include "dign/ops.hpp"
#include "dign/rng.hpp"
#include "oracles.hpp"

using namespace dign;
using TD = Tensor<double>;

namespace {

InceptionSpec four_branch(std::size_t in, bool bn = true) {
  InceptionSpec s;
  s.branches = {BranchSpec::conv(1, 32), BranchSpec::conv(3, 64, in / 4), BranchSpec::conv(5, 16, in / 8 ? in / 8 : 1),
                BranchSpec::pool(16)};
  s.batch_norm = bn;
  return s;
}

MaskedActivation<double> full_input(Shape s, std::uint64_t seed) {
  return {oracle::random(s, seed), TD::full({s.n, 1, s.h, s.w}, 1.0)};
}

InceptionSpec random_spec(Rng& rng) {
  InceptionSpec s;
  const std::size_t nb = 2 + rng.below(3);
  for (std::size_t i = 0; i < nb; ++i) {
    const std::size_t out = 1 + rng.below(12);
    switch (rng.below(3)) {
      case 0:
        s.branches.push_back(BranchSpec::conv(1 + 2 * rng.below(3), out, rng.below(2) ? 1 + rng.below(6) : 0));
        break;
      case 1:
        s.branches.push_back(BranchSpec::pool(out));
        break;
      default:
        s.branches.push_back(BranchSpec::decomposed(3 + 2 * rng.below(3), out, rng.below(2) ? 1 + rng.below(6) : 0,
                                                    rng.below(2) ? 1 + rng.below(6) : 0));
    }
  }
  s.stride = 1 + rng.below(2);
  s.batch_norm = rng.below(2);
  return s;
}

}  // namespace

TEST(ParamCount, ReductionArithmetic) {
  const auto direct = branch_param_count(BranchSpec::conv(5, 256), 128, false);
  EXPECT_EQ(direct.weights, 819200u);
  EXPECT_EQ(direct.bottleneck_weights, 0u);
  const auto reduced = branch_param_count(BranchSpec::conv(5, 256, 32), 128, false);
  EXPECT_EQ(reduced.bottleneck_weights, 128u * 32);
  EXPECT_EQ(reduced.weights - reduced.bottleneck_weights, 204800u);
  EXPECT_EQ(reduced.weights, 208896u);
  EXPECT_EQ(direct.weights / (reduced.weights - reduced.bottleneck_weights), 4u);
  EXPECT_EQ(reduced.biases, 32u);
  EXPECT_EQ(branch_param_count(BranchSpec::conv(1, 1), 1, false).weights, 1u);
  EXPECT_EQ(branch_param_count(BranchSpec::conv(1, 1), 1, true).biases, 1u);
}

TEST(ParamCount, DecomposedFormula) {
  InceptionSpec s;
  s.branches = {BranchSpec::decomposed(7, 20, 0, 12), BranchSpec::pool(4)};
  EXPECT_EQ(param_count(s, 10).weights, 10u * 7 * 12 + 12u * 7 * 20 + 10u * 4);
}

TEST(ParamCount, MatchesConstructedTensors) {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const InceptionSpec spec = random_spec(rng);
    const std::size_t cin = 1 + rng.below(10);
    InceptionLayer<double> layer(spec, cin, trial);
    std::vector<NamedTensor<double>> ts;
    layer.collect("x", ts);
    std::size_t weights = 0, biases = 0;
    for (const auto& t : ts) {
      const auto& n = t.name;
      if (n.ends_with(".weight")) weights += t.tensor.numel();
      if (n.ends_with(".bias")) biases += t.tensor.numel();
    }
    const auto pc = param_count(spec, cin);
    EXPECT_EQ(pc.weights, weights) << spec.branches_str();
    EXPECT_EQ(pc.biases, biases) << spec.branches_str();
  }
}

TEST(InceptionSpec, StandardBranchesAndValidation) {
  const auto s = InceptionSpec::standard(64, 128, 2, Activation::relu());
  ASSERT_EQ(s.branches.size(), 4u);
  EXPECT_EQ(s.branches[0], BranchSpec::conv(1, 32));
  EXPECT_EQ(s.branches[1], BranchSpec::conv(3, 64, 16));
  EXPECT_EQ(s.branches[2], BranchSpec::conv(5, 16, 8));
  EXPECT_EQ(s.branches[3], BranchSpec::pool(16));
  EXPECT_EQ(s.out_channels(), 128u);
  EXPECT_EQ(s.stride, 2u);
  const auto d = InceptionSpec::standard(64, 128, 1, Activation::relu(), true);
  EXPECT_EQ(d.branches[2].kind, BranchSpec::Kind::kDecomposedConv);
  EXPECT_THROW(InceptionSpec::standard(64, 4, 1, Activation::relu()), ConfigError);

  InceptionSpec one;
  one.branches = {BranchSpec::conv(3, 4)};
  EXPECT_THROW(one.validate(), ConfigError);
  InceptionSpec even;
  even.branches = {BranchSpec::conv(2, 4), BranchSpec::conv(1, 4)};
  EXPECT_THROW(even.validate(), ConfigError);
  InceptionSpec small;
  small.branches = {BranchSpec::decomposed(1, 4), BranchSpec::conv(1, 4)};
  EXPECT_THROW(small.validate(), ConfigError);
  EXPECT_THROW(InceptionLayer<double>(one, 3, 1), ConfigError);
}

TEST(InceptionSpec, BranchTextRoundTrip) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto s = random_spec(rng);
    EXPECT_EQ(InceptionSpec::parse_branches(s.branches_str()), s.branches);
  }
  EXPECT_THROW(InceptionSpec::parse_branches("conv(k=3"), ParseError);
  EXPECT_THROW(InceptionSpec::parse_branches("blur(k=3,out=2)"), ParseError);
}

TEST(Inception, ForwardShapesAndMask) {
  InceptionLayer<double> layer(four_branch(8), 8, 1);
  auto out = layer.forward(full_input({1, 8, 16, 16}, 2), Mode::kTrain);
  EXPECT_EQ(out.features.shape(), (Shape{1, 128, 16, 16}));
  for (double v : out.mask.data()) EXPECT_EQ(v, 1.0);
}

TEST(Inception, StridedForwardAndSpatialPreservation) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto spec = random_spec(rng);
    const std::size_t cin = 1 + rng.below(4);
    InceptionLayer<double> layer(spec, cin, trial);
    auto in = full_input({2, cin, 9, 10}, trial);
    in.mask.mutable_data()[3] = 0.0;
    auto out = layer.forward(in, Mode::kTrain);
    const std::size_t s = spec.stride;
    EXPECT_EQ(out.features.shape(), (Shape{2, spec.out_channels(), (9 - 1) / s + 1, (10 - 1) / s + 1}));
  }
}

TEST(Inception, DecomposedShapeMatchesDirect) {
  InceptionSpec direct, decomposed;
  direct.branches = {BranchSpec::conv(5, 6), BranchSpec::conv(1, 2)};
  decomposed.branches = {BranchSpec::decomposed(5, 6), BranchSpec::conv(1, 2)};
  direct.stride = decomposed.stride = 2;
  InceptionLayer<double> a(direct, 3, 1), b(decomposed, 3, 1);
  auto in = full_input({1, 3, 11, 11}, 3);
  auto ba = a.branch_outputs(in), bb = b.branch_outputs(in);
  EXPECT_EQ(ba[0].shape(), bb[0].shape());
  EXPECT_EQ(a.forward(in, Mode::kTrain).mask.shape(), b.forward(in, Mode::kTrain).mask.shape());
}

TEST(Inception, BranchOutputsPartitionChannels) {
  InceptionLayer<double> layer(four_branch(8, false), 8, 4);
  auto in = full_input({2, 8, 8, 8}, 5);
  auto parts = layer.branch_outputs(in);
  ASSERT_EQ(parts.size(), 4u);
  std::size_t c = 0;
  for (const auto& p : parts) c += p.shape().c;
  EXPECT_EQ(c, layer.out_channels());
  // Without batch norm the layer output is the activated concatenation.
  auto joined = activation(concat_channels(parts), Activation::relu());
  auto out = layer.forward(in, Mode::kTrain);
  EXPECT_EQ(oracle::max_abs_diff(joined.data(), out.features.data()), 0.0);
}

TEST(Inception, PoolBranchOnZeroInputIsBias) {
  InceptionLayer<double> layer(four_branch(8, false), 8, 6);
  std::vector<NamedTensor<double>> ts;
  layer.collect("l", ts);
  Tensor<double> bias;
  for (auto& t : ts)
    if (t.name == "l.branch3.conv.bias") bias = t.tensor;
  ASSERT_TRUE(bias.defined());
  for (std::size_t c = 0; c < 16; ++c) bias.mutable_data()[c] = 0.1 * c - 0.5;
  auto parts = layer.branch_outputs({TD::zeros({1, 8, 6, 6}), TD::full({1, 1, 6, 6}, 1.0)});
  for (std::size_t c = 0; c < 16; ++c)
    for (std::size_t i = 0; i < 36; ++i) EXPECT_DOUBLE_EQ(parts[3].at(0, c, i / 6, i % 6), 0.1 * c - 0.5);
}

TEST(Inception, BranchMasksAgreeWithFootprintRule) {
  InceptionLayer<double> layer(four_branch(8), 8, 7);
  auto in = full_input({1, 8, 16, 16}, 8);
  for (std::size_t y = 4; y < 12; ++y)
    for (std::size_t x = 3; x < 13; ++x) in.mask.mutable_data()[y * 16 + x] = 0.0;
  auto out = layer.forward(in, Mode::kTrain);
  auto expect = propagate_mask(in.mask, {5, 5}, {1, 1}, {2, 2});
  EXPECT_EQ(oracle::max_abs_diff(out.mask.data(), expect.data()), 0.0);
}

TEST(Inception, GradCheckSeed7) {
  auto spec = four_branch(4);
  spec.branches = {BranchSpec::conv(1, 2), BranchSpec::conv(3, 3, 2), BranchSpec::decomposed(5, 2, 1),
                   BranchSpec::pool(2)};
  spec.batch_norm = false;
  spec.activation = Activation::leaky_relu(0.2);
  InceptionLayer<double> layer(spec, 4, 7);
  std::vector<NamedTensor<double>> ts;
  layer.collect("l", ts);
  std::vector<TD> params;
  for (auto& t : ts) params.push_back(t.tensor.set_requires_grad());
  auto x = oracle::random({2, 4, 6, 6}, 7).set_requires_grad();
  auto m = TD::full({2, 1, 6, 6}, 1.0);
  m.mutable_data()[8] = m.mutable_data()[9] = m.mutable_data()[40] = 0.0;
  params.push_back(x);
  auto w = oracle::random({2, 9, 6, 6}, 8);
  const auto report = grad_check_report([&] { return weighted_sum(layer.forward({x, m}, Mode::kTrain).features, w); },
                                        params, 1e-5, 0, 1e-4);
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_LE(report.kinks * 10, report.probes);
}
