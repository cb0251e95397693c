#include "dign/pconv.hpp"

#include <limits>

#include "dign/ops.hpp"

namespace dign {

template <typename T>
void MaskedActivation<T>::validate(const char* where) const {
  const Shape& f = features.shape();
  const Shape& m = mask.shape();
  if (m.c != 1 || m.n != f.n || m.h != f.h || m.w != f.w) {
    throw ShapeError(std::string(where) + ": mask " + m.str() + " does not match features " + f.str());
  }
  require_binary(mask, where);
}

const char* to_string(NormMode mode) { return mode == NormMode::kPaper ? "paper" : "scaled"; }

NormMode parse_norm_mode(const std::string& text) {
  if (text == "paper") return NormMode::kPaper;
  if (text == "scaled") return NormMode::kScaled;
  throw ParseError("unknown norm mode '" + text + "'");
}

namespace {

kernels::ConvGeometry mask_geometry(const Shape& mask, Pair kernel, Pair stride, Pair padding, Pair dilation) {
  kernels::ConvGeometry g;
  g.in_channels = 1;
  g.out_channels = 1;
  g.in_h = mask.h;
  g.in_w = mask.w;
  g.kernel_h = kernel.h;
  g.kernel_w = kernel.w;
  g.stride_h = stride.h;
  g.stride_w = stride.w;
  g.pad_h = padding.h;
  g.pad_w = padding.w;
  g.dilation_h = dilation.h;
  g.dilation_w = dilation.w;
  if (g.out_h() == 0 || g.out_w() == 0) throw ShapeError("mask window does not fit input " + mask.str());
  return g;
}

}  // namespace

template <typename T>
MaskedActivation<T> partial_conv2d(const MaskedActivation<T>& input, const Conv2dParams<T>& p, NormMode mode) {
  input.validate("partial_conv2d");
  const Tensor<T>& x = input.features;
  const Tensor<T>& mask = input.mask;
  const kernels::ConvGeometry g = p.geometry(x.shape());
  const Shape s = x.shape();
  const std::size_t batch = s.n, P_in = s.plane();
  const std::size_t oh = g.out_h(), ow = g.out_w(), P = oh * ow;

  std::vector<T> masked(s.numel());
  {
    const auto xv = x.data();
    const auto mv = mask.data();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t base = (n * s.c + c) * P_in;
        for (std::size_t i = 0; i < P_in; ++i) masked[base + i] = mv[n * P_in + i] != T(0) ? xv[base + i] : T(0);
      }
  }

  kernels::ConvGeometry mg = g;
  mg.in_channels = 1;
  mg.out_channels = 1;
  std::vector<T> counts(batch * P);
  kernels::window_count<T>(mg, batch, mask.data(), counts);

  // sum(1) counts the in-bounds window elements, so an all-valid mask gives
  // ratio 1 at every position, borders included.
  std::vector<T> window;
  if (mode == NormMode::kScaled) {
    const std::vector<T> ones(P_in, T(1));
    window.resize(P);
    kernels::window_count<T>(mg, 1, ones, window);
  }
  std::vector<T> ratio(batch * P, T(0));
  std::vector<T> new_mask(batch * P, T(0));
  for (std::size_t i = 0; i < ratio.size(); ++i) {
    if (counts[i] > T(0)) {
      ratio[i] = (mode == NormMode::kScaled ? window[i % P] : T(1)) / counts[i];
      new_mask[i] = T(1);
    }
  }

  const Shape out_shape{batch, g.out_channels, oh, ow};
  std::vector<T> out(out_shape.numel());
  kernels::conv2d_forward<T>(g, batch, masked, p.weight.data(), out);
  const bool has_bias = p.bias.defined();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const T b = has_bias ? p.bias.data()[co] : T(0);
      T* dst = out.data() + (n * g.out_channels + co) * P;
      const T* r = ratio.data() + n * P;
      for (std::size_t i = 0; i < P; ++i) dst[i] = r[i] > T(0) ? dst[i] * r[i] + b : T(0);
    }

  std::vector<Tensor<T>> inputs{x, p.weight};
  if (has_bias) inputs.push_back(p.bias);
  Tensor<T> features = make_result<T>(
      "partial_conv2d", out_shape, std::move(out), std::move(inputs),
      [x, mask, w = p.weight, b = p.bias, g, batch, P, masked = std::move(masked),
       ratio = std::move(ratio)](std::span<const T> gout) {
        const std::size_t Cout = g.out_channels;
        std::vector<T> scaled(gout.size());
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t co = 0; co < Cout; ++co) {
            const std::size_t base = (n * Cout + co) * P;
            for (std::size_t i = 0; i < P; ++i) scaled[base + i] = gout[base + i] * ratio[n * P + i];
          }
        if (x.requires_grad()) {
          std::vector<T> gin(x.numel(), T(0));
          kernels::conv2d_backward_input<T>(g, batch, scaled, w.data(), gin);
          const Shape s = x.shape();
          const std::size_t P_in = s.plane();
          const auto mv = mask.data();
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t c = 0; c < s.c; ++c) {
              const std::size_t base = (n * s.c + c) * P_in;
              for (std::size_t i = 0; i < P_in; ++i)
                if (mv[n * P_in + i] == T(0)) gin[base + i] = T(0);
            }
          x.impl()->accumulate_grad(gin);
        }
        if (w.requires_grad()) {
          std::vector<T> gw(w.numel(), T(0));
          kernels::conv2d_backward_weight<T>(g, batch, masked, scaled, gw);
          w.impl()->accumulate_grad(gw);
        }
        if (b.defined() && b.requires_grad()) {
          std::vector<T> gb(Cout, T(0));
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t co = 0; co < Cout; ++co) {
              const std::size_t base = (n * Cout + co) * P;
              for (std::size_t i = 0; i < P; ++i)
                if (ratio[n * P + i] > T(0)) gb[co] += gout[base + i];
            }
          b.impl()->accumulate_grad(gb);
        }
      });
  return {features, Tensor<T>::from_data(Shape{batch, 1, oh, ow}, std::move(new_mask))};
}

template <typename T>
MaskedActivation<T> partial_max_pool2d(const MaskedActivation<T>& input, std::size_t kernel, std::size_t stride,
                                       std::size_t pad) {
  input.validate("partial_max_pool2d");
  const Shape s = input.features.shape();
  const kernels::ConvGeometry g = mask_geometry(input.mask.shape(), {kernel, kernel}, {stride, stride}, {pad, pad},
                                                {1, 1});
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const Shape out_shape{s.n, s.c, oh, ow};
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<T> out(out_shape.numel(), T(0));
  std::vector<std::size_t> route(out_shape.numel(), kNone);
  std::vector<T> new_mask(s.n * oh * ow, T(0));
  const auto x = input.features.data();
  const auto m = input.mask.data();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          std::size_t best = kNone;
          for (std::size_t ki = 0; ki < kernel; ++ki) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ki) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t kj = 0; kj < kernel; ++kj) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(xo * stride + kj) - static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
              const std::size_t p = iy * s.w + ix;
              if (m[n * s.plane() + p] == T(0)) continue;
              const std::size_t i = (n * s.c + c) * s.plane() + p;
              if (best == kNone || x[i] > x[best]) best = i;
            }
          }
          const std::size_t o = ((n * s.c + c) * oh + y) * ow + xo;
          if (best != kNone) {
            out[o] = x[best];
            route[o] = best;
            new_mask[(n * oh + y) * ow + xo] = T(1);
          }
        }
  const Tensor<T>& features = input.features;
  Tensor<T> pooled = make_result<T>("partial_max_pool2d", out_shape, std::move(out), {features},
                                    [features, route = std::move(route)](std::span<const T> grad) {
                                      std::vector<T> gin(features.numel(), T(0));
                                      for (std::size_t o = 0; o < grad.size(); ++o)
                                        if (route[o] != std::numeric_limits<std::size_t>::max())
                                          gin[route[o]] += grad[o];
                                      features.impl()->accumulate_grad(gin);
                                    });
  return {pooled, Tensor<T>::from_data(Shape{s.n, 1, oh, ow}, std::move(new_mask))};
}

template <typename T>
Tensor<T> propagate_mask(const Tensor<T>& mask, Pair kernel, Pair stride, Pair padding, Pair dilation) {
  require_binary(mask, "propagate_mask");
  const Shape s = mask.shape();
  if (s.c != 1) throw ShapeError("propagate_mask: mask must have one channel, got " + s.str());
  const kernels::ConvGeometry g = mask_geometry(s, kernel, stride, padding, dilation);
  std::vector<T> counts(s.n * g.out_h() * g.out_w());
  kernels::window_count<T>(g, s.n, mask.data(), counts);
  for (auto& v : counts) v = v > T(0) ? T(1) : T(0);
  return Tensor<T>::from_data(Shape{s.n, 1, g.out_h(), g.out_w()}, std::move(counts));
}

template <typename T>
std::vector<double> mask_coverage(const std::vector<Tensor<T>>& masks) {
  std::vector<double> out;
  out.reserve(masks.size());
  for (const auto& m : masks) {
    require_binary(m, "mask_coverage");
    double valid = 0.0;
    for (T v : m.data()) valid += static_cast<double>(v);
    out.push_back(valid / static_cast<double>(m.numel()));
  }
  return out;
}

#define DIGN_INSTANTIATE(T)                                                                                    \
  template struct MaskedActivation<T>;                                                                         \
  template MaskedActivation<T> partial_conv2d<T>(const MaskedActivation<T>&, const Conv2dParams<T>&, NormMode); \
  template MaskedActivation<T> partial_max_pool2d<T>(const MaskedActivation<T>&, std::size_t, std::size_t,     \
                                                     std::size_t);                                             \
  template Tensor<T> propagate_mask<T>(const Tensor<T>&, Pair, Pair, Pair, Pair);                              \
  template std::vector<double> mask_coverage<T>(const std::vector<Tensor<T>>&);

DIGN_INSTANTIATE(float)
DIGN_INSTANTIATE(double)
#undef DIGN_INSTANTIATE

}  // namespace dign
