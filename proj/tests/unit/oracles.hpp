#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dign/nn.hpp"
#include "dign/rng.hpp"
#include "dign/tensor.hpp"

namespace oracle {

inline dign::Tensor<double> random(dign::Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return dign::tensor_new<double>(s, dign::fill::Uniform{lo, hi}, seed);
}

/// Direct six-loop cross-correlation with zero padding and optional bias.
inline std::vector<double> conv(const std::vector<double>& in, dign::Shape xs, const std::vector<double>& w,
                                dign::Shape ws, const std::vector<double>* bias, dign::Pair stride, dign::Pair pad,
                                dign::Pair dil, std::size_t& oh, std::size_t& ow) {
  const long H = static_cast<long>(xs.h), W = static_cast<long>(xs.w);
  oh = (xs.h + 2 * pad.h - dil.h * (ws.h - 1) - 1) / stride.h + 1;
  ow = (xs.w + 2 * pad.w - dil.w * (ws.w - 1) - 1) / stride.w + 1;
  std::vector<double> out(xs.n * ws.n * oh * ow, 0.0);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t co = 0; co < ws.n; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = bias ? (*bias)[co] : 0.0;
          for (std::size_t ci = 0; ci < xs.c; ++ci)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const long iy = static_cast<long>(y * stride.h + ky * dil.h) - static_cast<long>(pad.h);
                const long ix = static_cast<long>(ox * stride.w + kx * dil.w) - static_cast<long>(pad.w);
                if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                acc += in[((n * xs.c + ci) * xs.h + iy) * xs.w + ix] * w[((co * ws.c + ci) * ws.h + ky) * ws.w + kx];
              }
          out[((n * ws.n + co) * oh + y) * ow + ox] = acc;
        }
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dign_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace oracle
