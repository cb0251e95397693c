#include <gtest/gtest.h>

#include "dign/ops.hpp"
#include "dign/pconv.hpp"
#include "dign/rng.hpp"
#include "oracles.hpp"

using namespace dign;
using TD = Tensor<double>;

namespace {

std::vector<double> values(const TD& t) { return {t.data().begin(), t.data().end()}; }

TD random_mask(Shape s, double p_valid, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(s.numel());
  for (auto& e : v) e = rng.bernoulli(p_valid) ? 1.0 : 0.0;
  return TD::from_data(s, v);
}

/// Scalar evaluation of the partial convolution at every output position.
struct PconvOracle {
  std::vector<double> out;
  std::vector<double> mask;
};

PconvOracle pconv_oracle(const TD& x, const TD& m, const Conv2dParams<double>& p, NormMode mode) {
  const Shape xs = x.shape(), ws = p.weight.shape();
  const auto g = p.geometry(xs);
  const std::size_t oh = g.out_h(), ow = g.out_w();
  PconvOracle r{std::vector<double>(xs.n * ws.n * oh * ow), std::vector<double>(xs.n * oh * ow)};
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double count = 0, inside = 0;
        for (std::size_t ky = 0; ky < ws.h; ++ky)
          for (std::size_t kx = 0; kx < ws.w; ++kx) {
            const long iy = long(y * p.stride.h + ky * p.dilation.h) - long(p.padding.h);
            const long ix = long(xo * p.stride.w + kx * p.dilation.w) - long(p.padding.w);
            if (iy >= 0 && ix >= 0 && iy < long(xs.h) && ix < long(xs.w)) {
              count += m.at(n, 0, iy, ix);
              inside += 1;
            }
          }
        r.mask[(n * oh + y) * ow + xo] = count > 0 ? 1.0 : 0.0;
        for (std::size_t co = 0; co < ws.n; ++co) {
          double acc = 0;
          for (std::size_t ci = 0; ci < xs.c; ++ci)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const long iy = long(y * p.stride.h + ky * p.dilation.h) - long(p.padding.h);
                const long ix = long(xo * p.stride.w + kx * p.dilation.w) - long(p.padding.w);
                if (iy < 0 || ix < 0 || iy >= long(xs.h) || ix >= long(xs.w)) continue;
                acc += p.weight.at(co, ci, ky, kx) * x.at(n, ci, iy, ix) * m.at(n, 0, iy, ix);
              }
          double v = 0;
          if (count > 0) {
            const double ratio = mode == NormMode::kPaper ? 1.0 / count : inside / count;
            v = acc * ratio + (p.bias.defined() ? p.bias.data()[co] : 0.0);
          }
          r.out[((n * ws.n + co) * oh + y) * ow + xo] = v;
        }
      }
  return r;
}

}  // namespace

TEST(PartialConv, FullMaskEqualsConv) {
  auto x = oracle::random({2, 3, 7, 7}, 1);
  auto p = make_conv<double>(3, 4, {3, 3}, {2, 2}, {1, 1}, true, 2);
  p.bias.mutable_data()[1] = 0.3;
  auto out = partial_conv2d<double>({x, TD::full({2, 1, 7, 7}, 1.0)}, p, NormMode::kScaled);
  EXPECT_LT(oracle::max_abs_diff(out.features.data(), conv2d(x, p).data()), 1e-6);
  for (double v : out.mask.data()) EXPECT_EQ(v, 1.0);
}

TEST(PartialConv, EmptyMaskGivesZeros) {
  auto x = oracle::random({1, 2, 6, 6}, 3);
  auto p = make_conv<double>(2, 3, {3, 3}, {1, 1}, {1, 1}, true, 4);
  for (auto& b : p.bias.mutable_data()) b = 1.5;
  for (auto mode : {NormMode::kPaper, NormMode::kScaled}) {
    auto out = partial_conv2d<double>({x, TD::zeros({1, 1, 6, 6})}, p, mode);
    for (double v : out.features.data()) EXPECT_EQ(v, 0.0);
    for (double v : out.mask.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(PartialConv, SingleWindowHandValue) {
  Conv2dParams<double> p;
  p.weight = TD::full({1, 1, 3, 3}, 1.0);
  auto x = TD::full({1, 1, 3, 3}, 1.0);
  auto m = TD::from_data({1, 1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto paper = partial_conv2d<double>({x, m}, p, NormMode::kPaper);
  auto scaled = partial_conv2d<double>({x, m}, p, NormMode::kScaled);
  EXPECT_DOUBLE_EQ(paper.features.item(), 1.0);
  EXPECT_DOUBLE_EQ(scaled.features.item(), 9.0);
  EXPECT_DOUBLE_EQ(pconv_oracle(x, m, p, NormMode::kPaper).out[0], 1.0);
  EXPECT_DOUBLE_EQ(pconv_oracle(x, m, p, NormMode::kScaled).out[0], 9.0);
}

TEST(PartialConv, MatchesScalarOracle) {
  std::uint64_t seed = 10;
  struct G {
    std::size_t cin, cout, h, w, k, s, pad, dil;
  };
  for (const G& g : {G{2, 3, 7, 7, 3, 1, 1, 1}, G{1, 2, 9, 8, 5, 2, 2, 1}, G{3, 2, 8, 8, 3, 2, 1, 2},
                     G{2, 2, 6, 6, 1, 1, 0, 1}}) {
    auto x = oracle::random({2, g.cin, g.h, g.w}, seed++);
    auto m = random_mask({2, 1, g.h, g.w}, 0.4, seed++);
    auto p = make_conv<double>(g.cin, g.cout, {g.k, g.k}, {g.s, g.s}, {g.pad, g.pad}, true, seed++, {g.dil, g.dil});
    for (auto& b : p.bias.mutable_data()) b = 0.25;
    for (auto mode : {NormMode::kPaper, NormMode::kScaled}) {
      auto out = partial_conv2d<double>({x, m}, p, mode);
      const auto ref = pconv_oracle(x, m, p, mode);
      EXPECT_LT(oracle::max_abs_diff(out.features.data(), ref.out), 1e-12);
      EXPECT_EQ(values(out.mask), ref.mask);
    }
  }
}

TEST(PartialConv, HoleContentsNeverReachOutput) {
  auto x = oracle::random({2, 2, 8, 8}, 20);
  auto m = random_mask({2, 1, 8, 8}, 0.5, 21);
  auto p = make_conv<double>(2, 3, {3, 3}, {1, 1}, {1, 1}, true, 22);
  auto base = partial_conv2d<double>({x, m}, p);
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    auto fuzz = oracle::random(x.shape(), 100 + trial, -1e3, 1e3);
    std::vector<double> v = values(x);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 64; ++i)
          if (m.data()[n * 64 + i] == 0.0) v[(n * 2 + c) * 64 + i] = fuzz.data()[(n * 2 + c) * 64 + i];
    auto out = partial_conv2d<double>({TD::from_data(x.shape(), v), m}, p);
    EXPECT_EQ(values(out.features), values(base.features));
  }
}

TEST(PartialConv, NoGradientUnderHoles) {
  auto x = oracle::random({1, 2, 6, 6}, 30).set_requires_grad();
  auto m = random_mask({1, 1, 6, 6}, 0.5, 31);
  auto p = make_conv<double>(2, 2, {3, 3}, {1, 1}, {1, 1}, true, 32);
  auto out = partial_conv2d<double>({x, m}, p);
  backward(weighted_sum(out.features, oracle::random(out.features.shape(), 33)));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 36; ++i)
      if (m.data()[i] == 0.0) EXPECT_EQ(x.grad()[c * 36 + i], 0.0);
}

TEST(PartialConv, MaskDependsOnGeometryOnly) {
  auto m = random_mask({1, 1, 9, 9}, 0.2, 40);
  auto p = make_conv<double>(1, 2, {3, 3}, {2, 2}, {1, 1}, false, 41);
  auto a = partial_conv2d<double>({oracle::random({1, 1, 9, 9}, 42), m}, p);
  auto b = partial_conv2d<double>({oracle::random({1, 1, 9, 9}, 43), m}, p);
  EXPECT_EQ(values(a.mask), values(b.mask));
  EXPECT_EQ(values(a.mask), values(propagate_mask(m, {3, 3}, {2, 2}, {1, 1})));
}

TEST(PartialConv, RejectsBadMasks) {
  auto x = oracle::random({1, 1, 4, 4}, 50);
  auto p = make_conv<double>(1, 1, {3, 3}, {1, 1}, {1, 1}, false, 51);
  auto m = TD::full({1, 1, 4, 4}, 1.0);
  m.mutable_data()[3] = 0.5;
  EXPECT_THROW(partial_conv2d<double>({x, m}, p), ContractError);
  EXPECT_THROW(partial_conv2d<double>({x, TD::full({1, 1, 3, 4}, 1.0)}, p), ShapeError);
}

TEST(PartialConv, GradCheck) {
  auto x = oracle::random({2, 2, 6, 6}, 60).set_requires_grad();
  auto m = random_mask({2, 1, 6, 6}, 0.5, 61);
  auto p = make_conv<double>(2, 3, {3, 3}, {2, 2}, {1, 1}, true, 62);
  p.weight.set_requires_grad();
  p.bias.set_requires_grad();
  for (auto mode : {NormMode::kPaper, NormMode::kScaled}) {
    auto f = [&] {
      auto out = partial_conv2d<double>({x, m}, p, mode);
      return weighted_sum(out.features, oracle::random(out.features.shape(), 63));
    };
    EXPECT_LT(grad_check(f, {x, p.weight, p.bias}, 1e-5), 1e-4);
  }
}

TEST(PartialMaxPool, ValidOnly) {
  auto x = TD::from_data({1, 1, 2, 2}, {9, 1, 2, 3});
  auto m = TD::from_data({1, 1, 2, 2}, {0, 1, 1, 1});
  auto out = partial_max_pool2d<double>({x, m}, 3, 1, 1);
  for (double v : out.features.data()) EXPECT_EQ(v, 3.0);
  auto none = partial_max_pool2d<double>({x, TD::zeros({1, 1, 2, 2})}, 3, 1, 1);
  for (double v : none.features.data()) EXPECT_EQ(v, 0.0);
  for (double v : none.mask.data()) EXPECT_EQ(v, 0.0);
}

TEST(MaskCoverage, Examples) {
  auto run = [&](TD m, std::size_t layers) {
    std::vector<TD> seq;
    for (std::size_t i = 0; i < layers; ++i) {
      m = propagate_mask(m, {3, 3}, {1, 1}, {1, 1});
      seq.push_back(m);
    }
    return mask_coverage(seq);
  };
  for (double c : run(TD::full({1, 1, 8, 8}, 1.0), 3)) EXPECT_EQ(c, 1.0);

  auto single = TD::full({1, 1, 8, 8}, 1.0);
  single.mutable_data()[27] = 0.0;
  EXPECT_EQ(run(single, 1)[0], 1.0);

  std::vector<double> hole(32 * 32, 1.0);
  for (std::size_t y = 12; y < 20; ++y)
    for (std::size_t x = 12; x < 20; ++x) hole[y * 32 + x] = 0.0;
  const auto cov = run(TD::from_data({1, 1, 32, 32}, hole), 6);
  // The 8x8 hole loses a one-pixel ring per layer: 6x6, 4x4, 2x2, then gone.
  const std::vector<double> expect = {1 - 36.0 / 1024, 1 - 16.0 / 1024, 1 - 4.0 / 1024, 1, 1, 1};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(cov[i], expect[i]);
}

TEST(NormModeText, RoundTrip) {
  for (auto m : {NormMode::kPaper, NormMode::kScaled}) EXPECT_EQ(parse_norm_mode(to_string(m)), m);
  EXPECT_THROW(parse_norm_mode("other"), Error);
}
