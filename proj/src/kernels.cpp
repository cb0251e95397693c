#include "dign/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <mutex>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dign::kernels {

namespace {

std::size_t out_extent(std::size_t in, std::size_t pad, std::size_t dilation, std::size_t k, std::size_t stride) {
  const std::size_t padded = in + 2 * pad;
  const std::size_t span = dilation * (k - 1) + 1;
  if (stride == 0 || padded < span) return 0;
  return (padded - span) / stride + 1;
}

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride_h == 1 && g.stride_w == 1 && g.pad_h == 0 && g.pad_w == 0;
}

// col is (patch, P) with P = out_h * out_w.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* col) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), P = oh * ow;
  const std::size_t K = g.patch();
  const std::size_t kk = g.kernel_h * g.kernel_w;
#pragma omp parallel for schedule(static) if (K * P > kParallelWork)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(K); ++k) {
    const std::size_t c = k / kk;
    const std::size_t ki = (k % kk) / g.kernel_w;
    const std::size_t kj = k % g.kernel_w;
    const T* plane = image + c * g.in_h * g.in_w;
    T* row = col + k * P;
    for (std::size_t y = 0; y < oh; ++y) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride_h + ki * g.dilation_h) -
                                static_cast<std::ptrdiff_t>(g.pad_h);
      T* dst = row + y * ow;
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
        std::fill(dst, dst + ow, T(0));
        continue;
      }
      const T* src = plane + iy * g.in_w;
      for (std::size_t x = 0; x < ow; ++x) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride_w + kj * g.dilation_w) -
                                  static_cast<std::ptrdiff_t>(g.pad_w);
        dst[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) ? T(0) : src[ix];
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* image) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), P = oh * ow;
  const std::size_t kk = g.kernel_h * g.kernel_w;
#pragma omp parallel for schedule(static) if (g.patch() * P > kParallelWork)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(g.in_channels); ++c) {
    T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t r = 0; r < kk; ++r) {
      const std::size_t ki = r / g.kernel_w;
      const std::size_t kj = r % g.kernel_w;
      const T* row = col + (c * kk + r) * P;
      for (std::size_t y = 0; y < oh; ++y) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride_h + ki * g.dilation_h) -
                                  static_cast<std::ptrdiff_t>(g.pad_h);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
        T* dst = plane + iy * g.in_w;
        const T* src = row + y * ow;
        for (std::size_t x = 0; x < ow; ++x) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride_w + kj * g.dilation_w) -
                                    static_cast<std::ptrdiff_t>(g.pad_w);
          if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ix] += src[x];
        }
      }
    }
  }
}

}  // namespace

std::size_t ConvGeometry::out_h() const { return out_extent(in_h, pad_h, dilation_h, kernel_h, stride_h); }
std::size_t ConvGeometry::out_w() const { return out_extent(in_w, pad_w, dilation_w, kernel_w, stride_w); }

void configure_threads() {
  static std::once_flag once;
  std::call_once(once, [] {
#ifdef _OPENMP
    if (const char* env = std::getenv("DIGN_THREADS")) {
      const int cap = std::atoi(env);
      if (cap > 0) omp_set_num_threads(std::min(cap, omp_get_max_threads()));
    }
#endif
  });
}

int max_threads() {
  configure_threads();
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const T> input, std::span<const T> weight,
                    std::span<T> output) {
  configure_threads();
  const std::size_t P = g.out_h() * g.out_w();
  const std::size_t K = g.patch();
  const std::size_t in_size = g.in_channels * g.in_h * g.in_w;
  const bool pointwise = is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : K * P);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* cols = input.data() + n * in_size;
    if (!pointwise) {
      im2col(g, cols, col.data());
      cols = col.data();
    }
    T* out = output.data() + n * g.out_channels * P;
#pragma omp parallel for schedule(static) if (g.out_channels * K * P > kParallelWork)
    for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(g.out_channels); ++co) {
      T* dst = out + co * P;
      std::fill(dst, dst + P, T(0));
      const T* w = weight.data() + co * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T wk = w[k];
        const T* src = cols + k * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] += wk * src[p];
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::size_t batch, std::span<const T> grad_output,
                           std::span<const T> weight, std::span<T> grad_input) {
  configure_threads();
  const std::size_t P = g.out_h() * g.out_w();
  const std::size_t K = g.patch();
  const std::size_t in_size = g.in_channels * g.in_h * g.in_w;
  const bool pointwise = is_pointwise(g);
  std::vector<T> dcol(K * P);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* gout = grad_output.data() + n * g.out_channels * P;
#pragma omp parallel for schedule(static) if (g.out_channels * K * P > kParallelWork)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(K); ++k) {
      T* dst = dcol.data() + k * P;
      std::fill(dst, dst + P, T(0));
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        const T wk = weight[co * K + k];
        const T* src = gout + co * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] += wk * src[p];
      }
    }
    T* gin = grad_input.data() + n * in_size;
    if (pointwise) {
      for (std::size_t i = 0; i < in_size; ++i) gin[i] += dcol[i];
    } else {
      col2im_add(g, dcol.data(), gin);
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, std::span<const T> input,
                            std::span<const T> grad_output, std::span<T> grad_weight) {
  configure_threads();
  const std::size_t P = g.out_h() * g.out_w();
  const std::size_t K = g.patch();
  const std::size_t in_size = g.in_channels * g.in_h * g.in_w;
  const bool pointwise = is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : K * P);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* cols = input.data() + n * in_size;
    if (!pointwise) {
      im2col(g, cols, col.data());
      cols = col.data();
    }
    const T* gout = grad_output.data() + n * g.out_channels * P;
#pragma omp parallel for schedule(static) if (g.out_channels * K * P > kParallelWork)
    for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(g.out_channels); ++co) {
      const T* go = gout + co * P;
      T* gw = grad_weight.data() + co * K;
      for (std::size_t k = 0; k < K; ++k) {
        const T* src = cols + k * P;
        T acc = T(0);
        for (std::size_t p = 0; p < P; ++p) acc += go[p] * src[p];
        gw[k] += acc;
      }
    }
  }
}

template <typename T>
void window_count(const ConvGeometry& g, std::size_t batch, std::span<const T> mask, std::span<T> counts) {
  configure_threads();
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t rows = batch * oh;
#pragma omp parallel for schedule(static) if (rows * ow * g.kernel_h * g.kernel_w > kParallelWork)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
    const std::size_t n = r / oh;
    const std::size_t y = r % oh;
    const T* plane = mask.data() + n * g.in_h * g.in_w;
    for (std::size_t x = 0; x < ow; ++x) {
      T count = T(0);
      for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride_h + ki * g.dilation_h) -
                                  static_cast<std::ptrdiff_t>(g.pad_h);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
        for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride_w + kj * g.dilation_w) -
                                    static_cast<std::ptrdiff_t>(g.pad_w);
          if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) count += plane[iy * g.in_w + ix];
        }
      }
      counts[r * ow + x] = count;
    }
  }
}

namespace reference {

namespace {

// Calls fn(n, co, y, x, c, iy, ix, k) for every in-bounds tap, in a fixed serial order.
template <typename Fn>
void for_each_tap(const ConvGeometry& g, std::size_t batch, Fn&& fn) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x)
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride_h + ki * g.dilation_h) -
                                          static_cast<std::ptrdiff_t>(g.pad_h);
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride_w + kj * g.dilation_w) -
                                          static_cast<std::ptrdiff_t>(g.pad_w);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) ||
                    ix >= static_cast<std::ptrdiff_t>(g.in_w))
                  continue;
                const std::size_t in_idx = ((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix;
                const std::size_t out_idx = ((n * g.out_channels + co) * oh + y) * ow + x;
                const std::size_t w_idx = ((co * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj;
                fn(in_idx, out_idx, w_idx);
              }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::size_t batch, std::span<const T> input, std::span<const T> weight,
                    std::span<T> output) {
  std::fill(output.begin(), output.end(), T(0));
  for_each_tap(g, batch, [&](std::size_t i, std::size_t o, std::size_t w) { output[o] += weight[w] * input[i]; });
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::size_t batch, std::span<const T> grad_output,
                           std::span<const T> weight, std::span<T> grad_input) {
  for_each_tap(g, batch,
               [&](std::size_t i, std::size_t o, std::size_t w) { grad_input[i] += weight[w] * grad_output[o]; });
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::size_t batch, std::span<const T> input,
                            std::span<const T> grad_output, std::span<T> grad_weight) {
  for_each_tap(g, batch,
               [&](std::size_t i, std::size_t o, std::size_t w) { grad_weight[w] += input[i] * grad_output[o]; });
}

template <typename T>
void window_count(const ConvGeometry& g, std::size_t batch, std::span<const T> mask, std::span<T> counts) {
  ConvGeometry single = g;
  single.in_channels = 1;
  single.out_channels = 1;
  const std::vector<T> ones(single.kernel_h * single.kernel_w, T(1));
  reference::conv2d_forward<T>(single, batch, mask, std::span<const T>(ones), counts);
}

}  // namespace reference

#define DIGN_INSTANTIATE_NS(NS, T)                                                                          \
  template void NS::conv2d_forward<T>(const ConvGeometry&, std::size_t, std::span<const T>, std::span<const T>, \
                                      std::span<T>);                                                        \
  template void NS::conv2d_backward_input<T>(const ConvGeometry&, std::size_t, std::span<const T>,          \
                                             std::span<const T>, std::span<T>);                             \
  template void NS::conv2d_backward_weight<T>(const ConvGeometry&, std::size_t, std::span<const T>,         \
                                              std::span<const T>, std::span<T>);                            \
  template void NS::window_count<T>(const ConvGeometry&, std::size_t, std::span<const T>, std::span<T>);

DIGN_INSTANTIATE_NS(kernels, float)
DIGN_INSTANTIATE_NS(kernels, double)
DIGN_INSTANTIATE_NS(reference, float)
DIGN_INSTANTIATE_NS(reference, double)
#undef DIGN_INSTANTIATE_NS

}  // namespace dign::kernels
