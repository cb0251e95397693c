#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dign/module.hpp"

namespace dign {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers aligned index for index with the parameter list they were created from.
template <typename T>
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::string> names;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  /// Zero moments for every trainable tensor in `params`.
  static AdamState create(const std::vector<NamedTensor<T>>& params, AdamOptions options = {});
};

/// One bias-corrected Adam update of every trainable tensor from its
/// accumulated gradient (zero when none). Throws TrainingError naming the
/// first parameter with a non-finite gradient, before anything is modified.
template <typename T>
void adam_step(std::vector<NamedTensor<T>>& params, AdamState<T>& state);

}  // namespace dign
