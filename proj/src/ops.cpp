#include "dign/ops.hpp"

#include <algorithm>
#include <cmath>

namespace dign {

namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <typename T>
void require_mask_for(const Tensor<T>& mask, const Tensor<T>& x, const char* op) {
  const Shape& m = mask.shape();
  const Shape& s = x.shape();
  if (m.c != 1 || m.n != s.n || m.h != s.h || m.w != s.w) {
    throw ShapeError(std::string(op) + ": mask " + m.str() + " does not match " + s.str());
  }
}

template <typename T>
constexpr T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

}  // namespace

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "elementwise");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  switch (op) {
    case BinaryOp::kAdd:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
      break;
    case BinaryOp::kSub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
      break;
    case BinaryOp::kMul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
      break;
  }
  static constexpr const char* kTags[] = {"add", "sub", "mul"};
  return make_result<T>(kTags[static_cast<int>(op)], a.shape(), std::move(out), {a, b},
                        [a, b, op](std::span<const T> g) {
                          const std::size_t n = g.size();
                          std::vector<T> ga(n), gb(n);
                          switch (op) {
                            case BinaryOp::kAdd:
                              std::copy(g.begin(), g.end(), ga.begin());
                              std::copy(g.begin(), g.end(), gb.begin());
                              break;
                            case BinaryOp::kSub:
                              for (std::size_t i = 0; i < n; ++i) {
                                ga[i] = g[i];
                                gb[i] = -g[i];
                              }
                              break;
                            case BinaryOp::kMul: {
                              const auto x = a.data();
                              const auto y = b.data();
                              for (std::size_t i = 0; i < n; ++i) {
                                ga[i] = g[i] * y[i];
                                gb[i] = g[i] * x[i];
                              }
                              break;
                            }
                          }
                          if (a.requires_grad()) a.impl()->accumulate_grad(ga);
                          if (b.requires_grad()) b.impl()->accumulate_grad(gb);
                        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [a, factor](std::span<const T> g) {
    std::vector<T> ga(g.begin(), g.end());
    for (auto& v : ga) v *= factor;
    a.impl()->accumulate_grad(ga);
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += value;
  return make_result<T>("add_scalar", a.shape(), std::move(out), {a},
                        [a](std::span<const T> g) { a.impl()->accumulate_grad(g); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return make_result<T>("sum", Shape{1, 1, 1, 1}, {total}, {a}, [a](std::span<const T> g) {
    std::vector<T> ga(a.numel(), g[0]);
    a.impl()->accumulate_grad(ga);
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, const Tensor<T>& weights) {
  require_same(a, weights, "weighted_sum");
  const auto x = a.data();
  const auto w = weights.data();
  T total = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * w[i];
  return make_result<T>("weighted_sum", Shape{1, 1, 1, 1}, {total}, {a}, [a, weights](std::span<const T> g) {
    std::vector<T> ga(weights.data().begin(), weights.data().end());
    for (auto& v : ga) v *= g[0];
    a.impl()->accumulate_grad(ga);
  });
}

template <typename T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b, T factor) {
  require_same(a, b, "l1_distance");
  const auto x = a.data();
  const auto y = b.data();
  T total = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) total += std::abs(x[i] - y[i]);
  return make_result<T>("l1_distance", Shape{1, 1, 1, 1}, {total * factor}, {a, b},
                        [a, b, factor](std::span<const T> g) {
                          const auto x = a.data();
                          const auto y = b.data();
                          std::vector<T> ga(x.size());
                          for (std::size_t i = 0; i < x.size(); ++i) ga[i] = g[0] * factor * sign(x[i] - y[i]);
                          if (a.requires_grad()) a.impl()->accumulate_grad(ga);
                          if (b.requires_grad()) {
                            for (auto& v : ga) v = -v;
                            b.impl()->accumulate_grad(ga);
                          }
                        });
}

template <typename T>
Tensor<T> mask_select(const Tensor<T>& mask, const Tensor<T>& keep, const Tensor<T>& fill) {
  require_same(keep, fill, "mask_select");
  require_mask_for(mask, keep, "mask_select");
  const Shape s = keep.shape();
  const std::size_t plane = s.plane();
  const auto m = mask.data();
  const auto k = keep.data();
  const auto f = fill.data();
  std::vector<T> out(s.numel());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        out[base + p] = m[n * plane + p] != T(0) ? k[base + p] : f[base + p];
      }
    }
  }
  return make_result<T>("mask_select", s, std::move(out), {keep, fill}, [mask, keep, fill](std::span<const T> g) {
    const Shape s = keep.shape();
    const std::size_t plane = s.plane();
    const auto m = mask.data();
    std::vector<T> gk(g.size(), T(0)), gf(g.size(), T(0));
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t base = (n * s.c + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          (m[n * plane + p] != T(0) ? gk : gf)[base + p] = g[base + p];
        }
      }
    }
    if (keep.requires_grad()) keep.impl()->accumulate_grad(gk);
    if (fill.requires_grad()) fill.impl()->accumulate_grad(gf);
  });
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& x, const Tensor<T>& mask) {
  return mask_select(mask, x, Tensor<T>::zeros(x.shape()));
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = std::clamp(v, lo, hi);
  return Tensor<T>::from_data(x.shape(), std::move(out));
}

template <typename T>
void require_binary(const Tensor<T>& mask, const char* where) {
  for (T v : mask.data()) {
    if (v != T(0) && v != T(1)) {
      throw ContractError(std::string(where) + ": mask must be binary, found value " + std::to_string(v));
    }
  }
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](T v) { return std::isfinite(v); });
}

#define DIGN_INSTANTIATE(T)                                                              \
  template Tensor<T> elementwise<T>(BinaryOp, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                      \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                 \
  template Tensor<T> sum<T>(const Tensor<T>&);                                           \
  template Tensor<T> mean<T>(const Tensor<T>&);                                          \
  template Tensor<T> weighted_sum<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> l1_distance<T>(const Tensor<T>&, const Tensor<T>&, T);              \
  template Tensor<T> mask_select<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> apply_mask<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                   \
  template void require_binary<T>(const Tensor<T>&, const char*);                        \
  template bool all_finite<T>(const Tensor<T>&);

DIGN_INSTANTIATE(float)
DIGN_INSTANTIATE(double)
#undef DIGN_INSTANTIATE

}  // namespace dign
