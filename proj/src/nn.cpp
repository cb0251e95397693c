#include "dign/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dign/rng.hpp"

namespace dign {

template <typename T>
kernels::ConvGeometry Conv2dParams<T>::geometry(const Shape& input) const {
  const Shape& w = weight.shape();
  if (input.c != w.c) {
    throw ShapeError("conv2d: input has " + std::to_string(input.c) + " channels, weight expects " +
                     std::to_string(w.c));
  }
  kernels::ConvGeometry g;
  g.in_channels = input.c;
  g.in_h = input.h;
  g.in_w = input.w;
  g.out_channels = w.n;
  g.kernel_h = w.h;
  g.kernel_w = w.w;
  g.stride_h = stride.h;
  g.stride_w = stride.w;
  g.pad_h = padding.h;
  g.pad_w = padding.w;
  g.dilation_h = dilation.h;
  g.dilation_w = dilation.w;
  if (stride.h == 0 || stride.w == 0 || dilation.h == 0 || dilation.w == 0) {
    throw ShapeError("conv2d: stride and dilation must be positive");
  }
  if (g.out_h() == 0 || g.out_w() == 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(w.h) + "x" + std::to_string(w.w) +
                     " does not fit input " + input.str());
  }
  return g;
}

template <typename T>
Conv2dParams<T> make_conv(std::size_t in_channels, std::size_t out_channels, Pair kernel, Pair stride, Pair padding,
                          bool with_bias, std::uint64_t seed, Pair dilation) {
  Conv2dParams<T> p;
  const double fan_in = static_cast<double>(in_channels * kernel.h * kernel.w);
  p.weight = tensor_new<T>(Shape{out_channels, in_channels, kernel.h, kernel.w},
                           fill::Gaussian{0.0, std::sqrt(2.0 / fan_in)}, seed);
  p.weight.set_requires_grad(true);
  if (with_bias) {
    p.bias = Tensor<T>::zeros(Shape{1, out_channels, 1, 1});
    p.bias.set_requires_grad(true);
  }
  p.stride = stride;
  p.padding = padding;
  p.dilation = dilation;
  return p;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Conv2dParams<T>& p) {
  const kernels::ConvGeometry g = p.geometry(input.shape());
  const std::size_t batch = input.shape().n;
  const Shape out_shape{batch, g.out_channels, g.out_h(), g.out_w()};
  std::vector<T> out(out_shape.numel());
  kernels::conv2d_forward<T>(g, batch, input.data(), p.weight.data(), out);
  const std::size_t P = out_shape.plane();
  if (p.bias.defined()) {
    const auto b = p.bias.data();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        T* dst = out.data() + (n * g.out_channels + co) * P;
        for (std::size_t i = 0; i < P; ++i) dst[i] += b[co];
      }
  }
  std::vector<Tensor<T>> inputs{input, p.weight};
  if (p.bias.defined()) inputs.push_back(p.bias);
  return make_result<T>("conv2d", out_shape, std::move(out), std::move(inputs),
                        [input, w = p.weight, b = p.bias, g, batch, P](std::span<const T> gout) {
                          if (input.requires_grad()) {
                            std::vector<T> gin(input.numel(), T(0));
                            kernels::conv2d_backward_input<T>(g, batch, gout, w.data(), gin);
                            input.impl()->accumulate_grad(gin);
                          }
                          if (w.requires_grad()) {
                            std::vector<T> gw(w.numel(), T(0));
                            kernels::conv2d_backward_weight<T>(g, batch, input.data(), gout, gw);
                            w.impl()->accumulate_grad(gw);
                          }
                          if (b.defined() && b.requires_grad()) {
                            std::vector<T> gb(g.out_channels, T(0));
                            for (std::size_t n = 0; n < batch; ++n)
                              for (std::size_t co = 0; co < g.out_channels; ++co) {
                                const T* src = gout.data() + (n * g.out_channels + co) * P;
                                for (std::size_t i = 0; i < P; ++i) gb[co] += src[i];
                              }
                            b.impl()->accumulate_grad(gb);
                          }
                        });
}

template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const Shape s = input.shape();
  if (kernel == 0 || stride == 0) throw ShapeError("pool2d: kernel and stride must be positive");
  if (s.h + 2 * pad < kernel || s.w + 2 * pad < kernel) {
    throw ShapeError("pool2d: kernel " + std::to_string(kernel) + " larger than padded input " + s.str());
  }
  const std::size_t oh = (s.h + 2 * pad - kernel) / stride + 1;
  const std::size_t ow = (s.w + 2 * pad - kernel) / stride + 1;
  const Shape out_shape{s.n, s.c, oh, ow};
  std::vector<T> out(out_shape.numel(), T(0));
  // Max: source index of the winner; avg: number of in-bounds elements.
  std::vector<std::size_t> route(out_shape.numel(), std::numeric_limits<std::size_t>::max());
  const auto x = input.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const std::size_t in_base = nc * s.plane();
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const std::size_t o = (nc * oh + y) * ow + xo;
        T acc = T(0);
        std::size_t count = 0;
        std::size_t best = std::numeric_limits<std::size_t>::max();
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(xo * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
            const std::size_t i = in_base + iy * s.w + ix;
            if (kind == PoolKind::kMax) {
              if (count == 0 || x[i] > acc) {
                acc = x[i];
                best = i;
              }
            } else {
              acc += x[i];
            }
            ++count;
          }
        }
        if (kind == PoolKind::kMax) {
          out[o] = acc;
          route[o] = best;
        } else {
          out[o] = count ? acc / static_cast<T>(count) : T(0);
          route[o] = count;
        }
      }
  }
  return make_result<T>(kind == PoolKind::kMax ? "max_pool2d" : "avg_pool2d", out_shape, std::move(out), {input},
                        [input, kind, kernel, stride, pad, oh, ow, route = std::move(route)](std::span<const T> g) {
                          const Shape s = input.shape();
                          std::vector<T> gin(input.numel(), T(0));
                          if (kind == PoolKind::kMax) {
                            for (std::size_t o = 0; o < g.size(); ++o)
                              if (route[o] != std::numeric_limits<std::size_t>::max()) gin[route[o]] += g[o];
                          } else {
                            for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
                              for (std::size_t y = 0; y < oh; ++y)
                                for (std::size_t xo = 0; xo < ow; ++xo) {
                                  const std::size_t o = (nc * oh + y) * ow + xo;
                                  if (route[o] == 0) continue;
                                  const T share = g[o] / static_cast<T>(route[o]);
                                  for (std::size_t ki = 0; ki < kernel; ++ki) {
                                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ki) -
                                                              static_cast<std::ptrdiff_t>(pad);
                                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
                                    for (std::size_t kj = 0; kj < kernel; ++kj) {
                                      const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * stride + kj) -
                                                                static_cast<std::ptrdiff_t>(pad);
                                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
                                      gin[nc * s.plane() + iy * s.w + ix] += share;
                                    }
                                  }
                                }
                          }
                          input.impl()->accumulate_grad(gin);
                        });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, std::size_t factor) {
  if (factor == 0) throw ShapeError("upsample_nearest: factor must be positive");
  const Shape s = input.shape();
  const Shape out_shape{s.n, s.c, s.h * factor, s.w * factor};
  std::vector<T> out(out_shape.numel());
  const auto x = input.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t y = 0; y < out_shape.h; ++y)
      for (std::size_t xo = 0; xo < out_shape.w; ++xo)
        out[(nc * out_shape.h + y) * out_shape.w + xo] = x[(nc * s.h + y / factor) * s.w + xo / factor];
  return make_result<T>("upsample_nearest", out_shape, std::move(out), {input},
                        [input, factor, out_shape](std::span<const T> g) {
                          const Shape s = input.shape();
                          std::vector<T> gin(input.numel(), T(0));
                          for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
                            for (std::size_t y = 0; y < out_shape.h; ++y)
                              for (std::size_t xo = 0; xo < out_shape.w; ++xo)
                                gin[(nc * s.h + y / factor) * s.w + xo / factor] +=
                                    g[(nc * out_shape.h + y) * out_shape.w + xo];
                          input.impl()->accumulate_grad(gin);
                        });
}

template <typename T>
BatchNormState<T> BatchNormState<T>::create(std::size_t channels) {
  BatchNormState s;
  const Shape shape{1, channels, 1, 1};
  s.gamma = Tensor<T>::full(shape, T(1));
  s.gamma.set_requires_grad(true);
  s.beta = Tensor<T>::zeros(shape);
  s.beta.set_requires_grad(true);
  s.running_mean = Tensor<T>::zeros(shape);
  s.running_var = Tensor<T>::full(shape, T(1));
  return s;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BatchNormState<T>& state, Mode mode) {
  const Shape s = input.shape();
  if (s.c != state.channels()) {
    throw ShapeError("batch_norm: input has " + std::to_string(s.c) + " channels, state has " +
                     std::to_string(state.channels()));
  }
  const std::size_t C = s.c, P = s.plane(), count = s.n * P;
  const auto x = input.data();
  const auto gamma = state.gamma.data();
  const auto beta = state.beta.data();
  std::vector<T> mean(C), invstd(C);
  if (mode == Mode::kTrain) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    const T m = static_cast<T>(state.momentum);
    for (std::size_t c = 0; c < C; ++c) {
      T acc = T(0);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* src = x.data() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) acc += src[i];
      }
      const T mu = acc / static_cast<T>(count);
      T sq = T(0);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* src = x.data() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) sq += (src[i] - mu) * (src[i] - mu);
      }
      const T var = sq / static_cast<T>(count);
      mean[c] = mu;
      invstd[c] = T(1) / std::sqrt(var + static_cast<T>(state.epsilon));
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      rm[c] = (T(1) - m) * rm[c] + m * mu;
      rv[c] = (T(1) - m) * rv[c] + m * unbiased;
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = rm[c];
      invstd[c] = T(1) / std::sqrt(rv[c] + static_cast<T>(state.epsilon));
    }
  }
  std::vector<T> xhat(s.numel()), out(s.numel());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        xhat[base + i] = (x[base + i] - mean[c]) * invstd[c];
        out[base + i] = gamma[c] * xhat[base + i] + beta[c];
      }
    }
  return make_result<T>(
      "batch_norm", s, std::move(out), {input, state.gamma, state.beta},
      [input, g_t = state.gamma, b_t = state.beta, mode, invstd = std::move(invstd),
       xhat = std::move(xhat)](std::span<const T> g) {
        const Shape s = input.shape();
        const std::size_t C = s.c, P = s.plane();
        const T count = static_cast<T>(s.n * P);
        const auto gamma = g_t.data();
        std::vector<T> dgamma(C, T(0)), dbeta(C, T(0));
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
              dbeta[c] += g[base + i];
              dgamma[c] += g[base + i] * xhat[base + i];
            }
          }
        if (input.requires_grad()) {
          std::vector<T> gin(s.numel());
          for (std::size_t n = 0; n < s.n; ++n)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t base = (n * C + c) * P;
              const T k = gamma[c] * invstd[c];
              for (std::size_t i = 0; i < P; ++i) {
                gin[base + i] = mode == Mode::kTrain
                                    ? k * (g[base + i] - dbeta[c] / count - xhat[base + i] * dgamma[c] / count)
                                    : k * g[base + i];
              }
            }
          input.impl()->accumulate_grad(gin);
        }
        if (g_t.requires_grad()) g_t.impl()->accumulate_grad(dgamma);
        if (b_t.requires_grad()) b_t.impl()->accumulate_grad(dbeta);
      });
}

std::string Activation::str() const {
  switch (kind) {
    case Kind::kNone:
      return "none";
    case Kind::kRelu:
      return "relu";
    case Kind::kLeakyRelu: {
      std::ostringstream os;
      os << "leaky_relu(" << alpha << ")";
      return os.str();
    }
  }
  return "none";
}

Activation Activation::parse(const std::string& text) {
  if (text == "none") return none();
  if (text == "relu") return relu();
  const std::string prefix = "leaky_relu(";
  if (text.rfind(prefix, 0) == 0 && text.back() == ')') {
    try {
      return leaky_relu(std::stod(text.substr(prefix.size(), text.size() - prefix.size() - 1)));
    } catch (const std::exception&) {
    }
  }
  throw ParseError("unknown activation '" + text + "'");
}

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation act) {
  if (act.kind == Activation::Kind::kNone) return input;
  if (act.kind == Activation::Kind::kLeakyRelu && !(act.alpha >= 0.0 && act.alpha <= 1.0)) {
    throw ContractError("leaky_relu: alpha must lie in [0, 1]");
  }
  const T alpha = act.kind == Activation::Kind::kRelu ? T(0) : static_cast<T>(act.alpha);
  const auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : alpha * x[i];
  const bool relu = act.kind == Activation::Kind::kRelu;
  return make_result<T>(relu ? "relu" : "leaky_relu", input.shape(), std::move(out), {input},
                        [input, alpha, relu](std::span<const T> g) {
                          const auto x = input.data();
                          std::vector<T> gin(g.size());
                          // Exactly at 0: relu takes subgradient 0, leaky takes its negative-side slope.
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gin[i] = x[i] > T(0) ? g[i] : (relu ? T(0) : alpha * g[i]);
                          input.impl()->accumulate_grad(gin);
                        });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = inputs.front().shape();
  std::size_t channels = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: spatial mismatch " + s.str() + " vs " + first.str());
    }
    channels += s.c;
  }
  if (inputs.size() == 1) return inputs.front();
  const Shape out_shape{first.n, channels, first.h, first.w};
  const std::size_t P = first.plane();
  std::vector<T> out(out_shape.numel());
  std::size_t offset = 0;
  for (const auto& t : inputs) {
    const std::size_t c = t.shape().c;
    for (std::size_t n = 0; n < first.n; ++n)
      std::copy_n(t.data().data() + n * c * P, c * P, out.data() + (n * channels + offset) * P);
    offset += c;
  }
  return make_result<T>("concat_channels", out_shape, std::move(out), inputs,
                        [inputs, channels, P](std::span<const T> g) {
                          std::size_t offset = 0;
                          for (const auto& t : inputs) {
                            const std::size_t c = t.shape().c;
                            if (t.requires_grad()) {
                              std::vector<T> part(t.numel());
                              for (std::size_t n = 0; n < t.shape().n; ++n)
                                std::copy_n(g.data() + (n * channels + offset) * P, c * P, part.data() + n * c * P);
                              t.impl()->accumulate_grad(part);
                            }
                            offset += c;
                          }
                        });
}

#define DIGN_INSTANTIATE(T)                                                                                    \
  template struct Conv2dParams<T>;                                                                             \
  template struct BatchNormState<T>;                                                                           \
  template Conv2dParams<T> make_conv<T>(std::size_t, std::size_t, Pair, Pair, Pair, bool, std::uint64_t, Pair); \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Conv2dParams<T>&);                                      \
  template Tensor<T> pool2d<T>(const Tensor<T>&, PoolKind, std::size_t, std::size_t, std::size_t);             \
  template Tensor<T> upsample_nearest<T>(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, BatchNormState<T>&, Mode);                                \
  template Tensor<T> activation<T>(const Tensor<T>&, Activation);                                              \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);

DIGN_INSTANTIATE(float)
DIGN_INSTANTIATE(double)
#undef DIGN_INSTANTIATE

}  // namespace dign
