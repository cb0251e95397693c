#include "dign/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dign/checkpoint.hpp"
#include "dign/ops.hpp"
#include "dign/rng.hpp"

namespace dign {

template <typename T>
FeatureExtractor<T>::FeatureExtractor(std::vector<Layer> layers, std::vector<std::size_t> taps,
                                      std::size_t in_channels)
    : layers_(std::move(layers)), taps_(std::move(taps)), in_channels_(in_channels) {
  if (taps_.empty()) throw ConfigError("feature extractor needs at least one tap");
  if (!std::is_sorted(taps_.begin(), taps_.end())) throw ConfigError("feature extractor taps must be ascending");
  if (taps_.back() > layers_.size()) throw ConfigError("feature extractor tap beyond last layer");
  for (auto& l : layers_) {
    l.conv.weight.set_requires_grad(false);
    if (l.conv.bias.defined()) l.conv.bias.set_requires_grad(false);
  }
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::random(std::uint64_t seed, std::size_t in_channels) {
  constexpr std::size_t kChannels[] = {8, 16, 16, 32, 32};
  constexpr std::size_t kStrides[] = {1, 2, 1, 2, 1};
  std::vector<Layer> layers;
  std::size_t cin = in_channels;
  for (std::size_t i = 0; i < 5; ++i) {
    layers.push_back({make_conv<T>(cin, kChannels[i], {3, 3}, {kStrides[i], kStrides[i]}, {1, 1}, false,
                                   derive_seed(seed, {i}))});
    cin = kChannels[i];
  }
  return FeatureExtractor(std::move(layers), {2, 3, 4}, in_channels);
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::identity() {
  return FeatureExtractor({}, {0}, 0);
}

template <typename T>
std::vector<Tensor<T>> FeatureExtractor<T>::extract(const Tensor<T>& x) const {
  if (in_channels_ != 0 && x.shape().c != in_channels_) {
    throw ShapeError("feature extractor expects " + std::to_string(in_channels_) + " channels, got " +
                     x.shape().str());
  }
  std::vector<Tensor<T>> out;
  Tensor<T> h = x;
  std::size_t next_tap = 0;
  if (taps_[0] == 0) {
    out.push_back(h);
    ++next_tap;
  }
  for (std::size_t i = 0; i < layers_.size() && next_tap < taps_.size(); ++i) {
    h = activation(conv2d(h, layers_[i].conv), Activation::relu());
    while (next_tap < taps_.size() && taps_[next_tap] == i + 1) {
      out.push_back(h);
      ++next_tap;
    }
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> FeatureExtractor<T>::named_weights() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.emplace_back("fx." + std::to_string(i) + ".weight", layers_[i].conv.weight);
    if (layers_[i].conv.bias.defined()) out.emplace_back("fx." + std::to_string(i) + ".bias", layers_[i].conv.bias);
  }
  return out;
}

template <typename T>
void FeatureExtractor<T>::load_weights(const std::string& path) {
  const CheckpointFile<T> file = read_checkpoint_file<T>(path);
  std::map<std::string, Tensor<T>> by_name(file.tensors.begin(), file.tensors.end());
  auto fetch = [&](const std::string& name, const Tensor<T>& like) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IncompatibleError("extractor weights: missing tensor " + name);
    if (it->second.shape() != like.shape()) {
      throw IncompatibleError("extractor weights: " + name + " has shape " + it->second.shape().str() +
                              ", expected " + like.shape().str());
    }
    return it->second;
  };
  std::vector<Layer> loaded = layers_;
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    const std::string p = "fx." + std::to_string(i);
    loaded[i].conv.weight = fetch(p + ".weight", layers_[i].conv.weight);
    if (by_name.count(p + ".bias")) {
      loaded[i].conv.bias = fetch(p + ".bias", Tensor<T>::zeros(Shape{1, loaded[i].conv.out_channels(), 1, 1}));
    }
  }
  *this = FeatureExtractor(std::move(loaded), taps_, in_channels_);
}

void LossWeights::validate() const {
  if (hole < 0 || valid < 0 || perceptual < 0 || style < 0) throw ContractError("loss weights must be non-negative");
  if (hole == 0 && valid == 0 && perceptual == 0 && style == 0) {
    throw ContractError("at least one loss weight must be positive");
  }
}

namespace {

template <typename T>
Tensor<T> masked_l1_term(const Tensor<T>& x, const Tensor<T>& output, const Tensor<T>& mask, bool hole) {
  const Shape s = x.shape();
  const std::size_t P = s.plane();
  const auto m = mask.data();
  std::size_t pixels = 0;
  for (T v : m) pixels += (v == T(0)) == hole ? 1 : 0;
  if (pixels == 0) return Tensor<T>::zeros(Shape{1, 1, 1, 1});
  const T norm = T(1) / static_cast<T>(pixels * s.c);
  const auto a = x.data();
  const auto b = output.data();
  T total = T(0);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * P;
      for (std::size_t i = 0; i < P; ++i)
        if ((m[n * P + i] == T(0)) == hole) total += std::abs(a[base + i] - b[base + i]);
    }
  return make_result<T>(hole ? "hole_l1" : "valid_l1", Shape{1, 1, 1, 1}, {total * norm}, {x, output},
                        [x, output, mask, hole, norm](std::span<const T> g) {
                          const Shape s = x.shape();
                          const std::size_t P = s.plane();
                          const auto m = mask.data();
                          const auto a = x.data();
                          const auto b = output.data();
                          std::vector<T> gx(x.numel(), T(0));
                          for (std::size_t n = 0; n < s.n; ++n)
                            for (std::size_t c = 0; c < s.c; ++c) {
                              const std::size_t base = (n * s.c + c) * P;
                              for (std::size_t i = 0; i < P; ++i) {
                                if ((m[n * P + i] == T(0)) != hole) continue;
                                const T d = a[base + i] - b[base + i];
                                gx[base + i] = g[0] * norm * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
                              }
                            }
                          if (x.requires_grad()) x.impl()->accumulate_grad(gx);
                          if (output.requires_grad()) {
                            for (auto& v : gx) v = -v;
                            output.impl()->accumulate_grad(gx);
                          }
                        });
}

template <typename T>
void require_pair(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
}

}  // namespace

template <typename T>
ReconstructionTerms<T> masked_l1(const Tensor<T>& x, const Tensor<T>& output, const Tensor<T>& mask) {
  require_pair(x, output, "masked_l1");
  const Shape s = x.shape();
  if (mask.shape() != Shape{s.n, 1, s.h, s.w}) {
    throw ShapeError("masked_l1: mask " + mask.shape().str() + " does not match " + s.str());
  }
  require_binary(mask, "masked_l1");
  return {masked_l1_term(x, output, mask, true), masked_l1_term(x, output, mask, false)};
}

template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& yhat, const Tensor<T>& y, const FeatureExtractor<T>& fx) {
  require_pair(yhat, y, "perceptual_loss");
  const auto a = fx.extract(yhat);
  const auto b = fx.extract(y);
  Tensor<T> total;
  for (std::size_t j = 0; j < a.size(); ++j) {
    Tensor<T> term = l1_distance(a[j], b[j], T(1) / static_cast<T>(a[j].numel()));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
Tensor<T> gram(const Tensor<T>& features) {
  const Shape s = features.shape();
  const std::size_t C = s.c, P = s.plane();
  const T norm = T(1) / static_cast<T>(C * P);
  const auto f = features.data();
  const Shape out_shape{s.n, 1, C, C};
  std::vector<T> out(out_shape.numel());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t a = 0; a < C; ++a)
      for (std::size_t b = a; b < C; ++b) {
        const T* fa = f.data() + (n * C + a) * P;
        const T* fb = f.data() + (n * C + b) * P;
        T acc = T(0);
        for (std::size_t p = 0; p < P; ++p) acc += fa[p] * fb[p];
        out[(n * C + a) * C + b] = acc * norm;
        out[(n * C + b) * C + a] = acc * norm;
      }
  return make_result<T>("gram", out_shape, std::move(out), {features}, [features, norm](std::span<const T> g) {
    const Shape s = features.shape();
    const std::size_t C = s.c, P = s.plane();
    const auto f = features.data();
    std::vector<T> gf(features.numel(), T(0));
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t a = 0; a < C; ++a) {
        T* dst = gf.data() + (n * C + a) * P;
        for (std::size_t b = 0; b < C; ++b) {
          const T k = (g[(n * C + a) * C + b] + g[(n * C + b) * C + a]) * norm;
          const T* fb = f.data() + (n * C + b) * P;
          for (std::size_t p = 0; p < P; ++p) dst[p] += k * fb[p];
        }
      }
    features.impl()->accumulate_grad(gf);
  });
}

template <typename T>
Tensor<T> style_loss(const Tensor<T>& yhat, const Tensor<T>& y, const FeatureExtractor<T>& fx) {
  require_pair(yhat, y, "style_loss");
  const auto a = fx.extract(yhat);
  const auto b = fx.extract(y);
  const T per_item = T(1) / static_cast<T>(yhat.shape().n);
  Tensor<T> total;
  for (std::size_t j = 0; j < a.size(); ++j) {
    Tensor<T> term = l1_distance(gram(a[j]), gram(b[j]), per_item);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& x, const Tensor<T>& output, const Tensor<T>& composite,
                            const Tensor<T>& mask, const FeatureExtractor<T>& fx, const LossWeights& w) {
  w.validate();
  require_pair(x, composite, "total_loss");
  LossBreakdown<T> out;
  const ReconstructionTerms<T> rec = masked_l1(x, output, mask);
  const Tensor<T> perc = perceptual_loss(composite, x, fx);
  const Tensor<T> style = style_loss(composite, x, fx);
  out.hole = static_cast<double>(rec.hole.item());
  out.valid = static_cast<double>(rec.valid.item());
  out.perceptual = static_cast<double>(perc.item());
  out.style = static_cast<double>(style.item());
  const std::pair<double, const Tensor<T>*> terms[] = {
      {w.hole, &rec.hole}, {w.valid, &rec.valid}, {w.perceptual, &perc}, {w.style, &style}};
  for (const auto& [weight, term] : terms) {
    if (weight == 0.0) continue;
    Tensor<T> weighted = scale(*term, static_cast<T>(weight));
    out.total = out.total.defined() ? add(out.total, weighted) : weighted;
  }
  return out;
}

#define DIGN_INSTANTIATE(T)                                                                                 \
  template class FeatureExtractor<T>;                                                                       \
  template ReconstructionTerms<T> masked_l1<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> perceptual_loss<T>(const Tensor<T>&, const Tensor<T>&, const FeatureExtractor<T>&);    \
  template Tensor<T> gram<T>(const Tensor<T>&);                                                             \
  template Tensor<T> style_loss<T>(const Tensor<T>&, const Tensor<T>&, const FeatureExtractor<T>&);         \
  template LossBreakdown<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                          const Tensor<T>&, const FeatureExtractor<T>&, const LossWeights&);

DIGN_INSTANTIATE(float)
DIGN_INSTANTIATE(double)
#undef DIGN_INSTANTIATE

}  // namespace dign
