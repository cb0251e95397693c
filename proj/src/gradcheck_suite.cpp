#include "dign/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "dign/generator.hpp"
#include "dign/losses.hpp"
#include "dign/ops.hpp"
#include "dign/rng.hpp"

namespace dign {

namespace {

using TensorD = Tensor<double>;
using Forward = std::function<TensorD()>;

struct Case {
  std::string family;
  std::string name;
  std::function<GradCheckReport(double eps, const std::function<TensorD(TensorD)>& wrap)> run;
};

TensorD gaussian(Shape s, std::uint64_t seed) { return tensor_new<double>(s, fill::Gaussian{0.0, 1.0}, seed); }

/// Values bounded away from zero so kinks stay out of reach of the finite difference.
TensorD away_from_zero(Shape s, std::uint64_t seed) {
  TensorD t = tensor_new<double>(s, fill::Uniform{0.1, 1.0}, seed);
  Rng rng(derive_seed(seed, {7}));
  for (double& v : t.mutable_data())
    if (rng.bernoulli(0.5)) v = -v;
  return t;
}

/// Binary mask with a rectangular hole covering roughly the middle third.
TensorD holed_mask(Shape s) {
  TensorD m = TensorD::full(Shape{s.n, 1, s.h, s.w}, 1.0);
  auto d = m.mutable_data();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = s.h / 3; y < 2 * s.h / 3 + 1; ++y)
      for (std::size_t x = s.w / 4 + n; x < 3 * s.w / 4; ++x) d[(n * s.h + y) * s.w + x] = 0.0;
  return m;
}

/// Scalar probe sum_i out[i] * r[i] with fixed random r.
TensorD probe(const TensorD& out, std::uint64_t seed) {
  return weighted_sum(out, gaussian(out.shape(), derive_seed(seed, {0x9e})));
}

TensorD faulty_identity(const TensorD& x) {
  return make_result<double>("faulty_identity", x.shape(), std::vector<double>(x.data().begin(), x.data().end()),
                             {x}, [x](std::span<const double> g) {
                               std::vector<double> scaled(g.begin(), g.end());
                               for (double& v : scaled) v *= 1.01;
                               x.impl()->accumulate_grad(scaled);
                             });
}

std::vector<TensorD> trainable(const std::vector<NamedTensor<double>>& named) {
  std::vector<TensorD> out;
  for (const auto& nt : named)
    if (nt.trainable) out.push_back(nt.tensor);
  return out;
}

Case make_case(std::string family, std::string name, std::function<TensorD()> forward, std::vector<TensorD> params,
               std::size_t max_entries = 0, double kink_threshold = 0.0) {
  return {std::move(family), std::move(name),
          [forward, params, max_entries, kink_threshold](double eps, const std::function<TensorD(TensorD)>& wrap) {
            return grad_check_report([&] { return wrap(forward()); }, params, eps, max_entries, kink_threshold);
          }};
}

std::vector<Case> build_cases() {
  std::vector<Case> cases;

  {
    TensorD x = gaussian({2, 3, 6, 6}, 1);
    auto p = make_conv<double>(3, 4, {3, 3}, {1, 1}, {1, 1}, true, 2);
    p.bias = gaussian(p.bias.shape(), 3);
    cases.push_back(make_case("conv2d", "3x3 stride 1 pad 1", [=] { return probe(conv2d(x, p), 4); },
                              {x, p.weight, p.bias}));
    TensorD x2 = gaussian({1, 2, 9, 8}, 5);
    auto q = make_conv<double>(2, 3, {3, 2}, {2, 1}, {0, 1}, true, 6, {2, 1});
    q.bias = gaussian(q.bias.shape(), 7);
    cases.push_back(make_case("conv2d", "3x2 stride (2,1) dilation (2,1)", [=] { return probe(conv2d(x2, q), 8); },
                              {x2, q.weight, q.bias}));
  }

  for (NormMode mode : {NormMode::kScaled, NormMode::kPaper}) {
    TensorD x = gaussian({2, 3, 8, 8}, 11);
    TensorD m = holed_mask(x.shape());
    auto p = make_conv<double>(3, 4, {3, 3}, {1, 1}, {1, 1}, true, 12);
    p.bias = gaussian(p.bias.shape(), 13);
    cases.push_back(make_case("pconv", std::string("3x3 stride 1, ") + to_string(mode),
                              [=] { return probe(partial_conv2d<double>({x, m}, p, mode).features, 14); },
                              {x, p.weight, p.bias}));
    auto q = make_conv<double>(3, 2, {5, 5}, {2, 2}, {2, 2}, true, 15);
    q.bias = gaussian(q.bias.shape(), 16);
    cases.push_back(make_case("pconv", std::string("5x5 stride 2, ") + to_string(mode),
                              [=] { return probe(partial_conv2d<double>({x, m}, q, mode).features, 17); },
                              {x, q.weight, q.bias}));
  }

  {
    TensorD x = gaussian({2, 2, 7, 7}, 21);
    TensorD m = holed_mask(x.shape());
    cases.push_back(make_case("pooling", "max 3x3 stride 2 pad 1",
                              [=] { return probe(pool2d(x, PoolKind::kMax, 3, 2, 1), 22); }, {x}));
    cases.push_back(make_case("pooling", "avg 2x2 stride 2", [=] { return probe(pool2d(x, PoolKind::kAvg, 2, 2, 0), 23); },
                              {x}));
    cases.push_back(make_case("pooling", "partial max 3x3 stride 1 pad 1",
                              [=] { return probe(partial_max_pool2d<double>({x, m}, 3, 1, 1).features, 24); }, {x}));
  }

  {
    TensorD x = gaussian({3, 4, 3, 3}, 31);
    auto bn = std::make_shared<BatchNormState<double>>(BatchNormState<double>::create(4));
    bn->gamma = gaussian(bn->gamma.shape(), 32);
    bn->beta = gaussian(bn->beta.shape(), 33);
    cases.push_back(make_case("batch_norm", "train", [=] { return probe(batch_norm(x, *bn, Mode::kTrain), 34); },
                              {x, bn->gamma, bn->beta}));
    auto ev = std::make_shared<BatchNormState<double>>(BatchNormState<double>::create(4));
    ev->gamma = gaussian(ev->gamma.shape(), 35);
    ev->running_mean = gaussian(ev->running_mean.shape(), 36);
    ev->running_var = tensor_new<double>(ev->running_var.shape(), fill::Uniform{0.5, 2.0}, 37);
    cases.push_back(make_case("batch_norm", "eval", [=] { return probe(batch_norm(x, *ev, Mode::kEval), 38); },
                              {x, ev->gamma, ev->beta}));
  }

  {
    TensorD x = away_from_zero({2, 3, 4, 4}, 41);
    cases.push_back(make_case("activation", "relu", [=] { return probe(activation(x, Activation::relu()), 42); }, {x}));
    cases.push_back(make_case("activation", "leaky_relu(0.2)",
                              [=] { return probe(activation(x, Activation::leaky_relu(0.2)), 43); }, {x}));
  }

  {
    TensorD a = gaussian({2, 2, 3, 3}, 51), b = gaussian({2, 3, 3, 3}, 52), c = gaussian({2, 1, 3, 3}, 53);
    cases.push_back(make_case("concat", "three inputs", [=] { return probe(concat_channels<double>({a, b, c}), 54); },
                              {a, b, c}));
    cases.push_back(make_case("upsample", "nearest x2", [=] { return probe(upsample_nearest(a, 2), 55); }, {a}));
  }

  {
    TensorD img = gaussian({2, 3, 5, 5}, 61), out = gaussian({2, 3, 5, 5}, 62);
    TensorD m = holed_mask(img.shape());
    cases.push_back(make_case("masking", "composite", [=] { return probe(composite(img, out, m), 63); }, {out}));
    cases.push_back(make_case("masking", "elementwise mul/sub/add",
                              [=] { return probe(add(mul(img, out), sub(out, img)), 64); }, {img, out}));
  }

  {
    TensorD x = tensor_new<double>({2, 3, 16, 16}, fill::Uniform{0.0, 1.0}, 71);
    TensorD y = tensor_new<double>({2, 3, 16, 16}, fill::Uniform{0.0, 1.0}, 72);
    TensorD m = holed_mask(x.shape());
    auto fx = std::make_shared<FeatureExtractor<double>>(FeatureExtractor<double>::random(73));
    cases.push_back(make_case("losses", "hole l1", [=] { return masked_l1(x, y, m).hole; }, {y}));
    cases.push_back(make_case("losses", "valid l1", [=] { return masked_l1(x, y, m).valid; }, {y}));
    cases.push_back(make_case("losses", "perceptual", [=] { return perceptual_loss(y, x, *fx); }, {y}));
    TensorD f = gaussian({2, 3, 4, 4}, 74);
    cases.push_back(make_case("losses", "gram", [=] { return probe(gram(f), 75); }, {f}));
    cases.push_back(make_case("losses", "style", [=] { return style_loss(y, x, *fx); }, {y}));
    cases.push_back(make_case("losses", "total (default weights)",
                              [=] { return total_loss(x, y, composite(x, y, m), m, *fx, LossWeights{}).total; }, {y}));
  }

  {
    for (bool decompose : {false, true}) {
      auto layer = std::make_shared<InceptionLayer<double>>(
          InceptionSpec::standard(8, 16, decompose ? 2 : 1, Activation::relu(), decompose), 8, 81);
      std::vector<NamedTensor<double>> named;
      layer->collect("inc", named);
      TensorD x = gaussian({2, 8, 8, 8}, 82);
      TensorD m = holed_mask(x.shape());
      std::vector<TensorD> params = trainable(named);
      params.push_back(x);
      cases.push_back(make_case("inception", decompose ? "stride 2, decomposed 5x5" : "stride 1, standard",
                                [=] { return probe(layer->forward({x, m}, Mode::kTrain).features, 83); }, params,
                                16));
    }
  }

  {
    auto gen = std::make_shared<Generator<double>>(GeneratorConfig::standard(32, ChannelScale{1, 16}), 91);
    TensorD img = tensor_new<double>({2, 3, 32, 32}, fill::Uniform{0.0, 1.0}, 92);
    TensorD m = holed_mask(img.shape());
    {
      // Running statistics settle on this batch, so eval mode sees normalized activations.
      NoGradGuard<double> no_grad;
      for (int i = 0; i < 60; ++i) gen->forward(img, m, Mode::kTrain);
    }
    std::vector<TensorD> params = trainable(gen->tensors());
    params.push_back(img);
    cases.push_back(make_case("generator", "scale 1/16 at 32x32, calibrated eval",
                              [=] { return probe(gen->forward(img, m, Mode::kEval), 93); }, params, 8, 1e-4));
  }
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_families() {
  return {"conv2d", "pconv", "pooling", "batch_norm", "activation", "concat", "upsample",
          "masking", "losses", "inception", "generator"};
}

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options) {
  const auto families = gradcheck_families();
  if (!options.only.empty() && std::find(families.begin(), families.end(), options.only) == families.end()) {
    std::string list;
    for (const auto& f : families) list += (list.empty() ? "" : ", ") + f;
    throw ConfigError("unknown gradcheck family '" + options.only + "' (expected one of " + list + ")");
  }
  const std::function<TensorD(TensorD)> wrap = options.inject_fault
                                                   ? std::function<TensorD(TensorD)>(faulty_identity)
                                                   : std::function<TensorD(TensorD)>([](TensorD t) { return t; });
  std::vector<GradCheckResult> results;
  for (const Case& c : build_cases()) {
    if (!options.only.empty() && c.family != options.only) continue;
    const GradCheckReport r = c.run(options.eps, wrap);
    const bool few_kinks = static_cast<double>(r.kinks) <= options.max_kink_fraction * static_cast<double>(r.probes);
    results.push_back({c.family, c.name, r.max_rel_error, r.probes, r.kinks,
                       std::isfinite(r.max_rel_error) && r.max_rel_error < options.tolerance && few_kinks});
  }
  return results;
}

}  // namespace dign
