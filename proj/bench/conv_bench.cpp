// Times the im2col/OpenMP convolution kernels against the serial direct loops.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "dign/kernels.hpp"
#include "dign/rng.hpp"

namespace k = dign::kernels;

namespace {

struct Workload {
  const char* name;
  k::ConvGeometry g;
  std::size_t batch;
};

double time_ms(const std::function<void()>& fn, int reps) {
  fn();
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto end = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(end - start).count() / reps;
}

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
  dign::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.gaussian(0.0, 1.0));
  return v;
}

}  // namespace

int main() {
  k::configure_threads();
  const Workload loads[] = {
      {"3x3 64->64 @ 64x64", {64, 64, 64, 64, 3, 3, 1, 1, 1, 1, 1, 1}, 2},
      {"7x7 s2 3->32 @ 128x128", {3, 128, 128, 32, 7, 7, 2, 2, 3, 3, 1, 1}, 2},
      {"1x1 128->64 @ 32x32", {128, 32, 32, 64, 1, 1, 1, 1, 0, 0, 1, 1}, 4},
      {"5x5 16->32 @ 32x32", {16, 32, 32, 32, 5, 5, 1, 1, 2, 2, 1, 1}, 4},
  };
  std::printf("threads: %d\n", k::max_threads());
  std::printf("%-26s %-10s %12s %12s %9s %12s\n", "workload", "pass", "serial ms", "parallel ms", "speedup",
              "max |diff|");
  for (const auto& w : loads) {
    const auto& g = w.g;
    const std::size_t in_n = w.batch * g.in_channels * g.in_h * g.in_w;
    const std::size_t out_n = w.batch * g.out_channels * g.out_h() * g.out_w();
    const std::size_t w_n = g.out_channels * g.patch();
    const auto x = random_vector(in_n, 1), wt = random_vector(w_n, 2), gy = random_vector(out_n, 3);
    std::vector<float> a(out_n), b(out_n), gi_a(in_n), gi_b(in_n), gw_a(w_n), gw_b(w_n);
    const int reps = 3;

    auto report = [&](const char* pass, double ts, double tp, const std::vector<float>& r, const std::vector<float>& p) {
      double diff = 0.0;
      for (std::size_t i = 0; i < r.size(); ++i) diff = std::max(diff, std::abs(static_cast<double>(r[i]) - p[i]));
      std::printf("%-26s %-10s %12.3f %12.3f %8.2fx %12.3g\n", w.name, pass, ts, tp, ts / tp, diff);
    };

    report("forward", time_ms([&] { k::reference::conv2d_forward<float>(g, w.batch, x, wt, a); }, reps),
           time_ms([&] { k::conv2d_forward<float>(g, w.batch, x, wt, b); }, reps), a, b);
    report("grad in",
           time_ms([&] { std::fill(gi_a.begin(), gi_a.end(), 0.f);
                         k::reference::conv2d_backward_input<float>(g, w.batch, gy, wt, gi_a); }, reps),
           time_ms([&] { std::fill(gi_b.begin(), gi_b.end(), 0.f);
                         k::conv2d_backward_input<float>(g, w.batch, gy, wt, gi_b); }, reps),
           gi_a, gi_b);
    report("grad w",
           time_ms([&] { std::fill(gw_a.begin(), gw_a.end(), 0.f);
                         k::reference::conv2d_backward_weight<float>(g, w.batch, x, gy, gw_a); }, reps),
           time_ms([&] { std::fill(gw_b.begin(), gw_b.end(), 0.f);
                         k::conv2d_backward_weight<float>(g, w.batch, x, gy, gw_b); }, reps),
           gw_a, gw_b);
  }
  return 0;
}
