#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dign/kernels.hpp"
#include "dign/tensor.hpp"

namespace dign {

struct Pair {
  std::size_t h = 1;
  std::size_t w = 1;
  constexpr bool operator==(const Pair&) const = default;
};

/// Weights of a 2-D convolution; bias is optional (undefined tensor when absent).
template <typename T>
struct Conv2dParams {
  Tensor<T> weight;  // (Cout, Cin, kH, kW)
  Tensor<T> bias;    // (1, Cout, 1, 1) or undefined
  Pair stride{1, 1};
  Pair padding{0, 0};
  Pair dilation{1, 1};

  std::size_t out_channels() const { return weight.shape().n; }
  std::size_t in_channels() const { return weight.shape().c; }
  std::size_t weight_count() const { return weight.numel(); }
  /// Geometry against an input of the given extents; throws ShapeError when the window does not fit.
  kernels::ConvGeometry geometry(const Shape& input) const;
};

/// He-normal weights (std = sqrt(2 / fan_in)) and zero bias.
template <typename T>
Conv2dParams<T> make_conv(std::size_t in_channels, std::size_t out_channels, Pair kernel, Pair stride, Pair padding,
                          bool with_bias, std::uint64_t seed, Pair dilation = {1, 1});

/// Standard cross-correlation plus bias; differentiable in input, weight and bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Conv2dParams<T>& p);

enum class PoolKind { kMax, kAvg };

/// Window reduction over in-bounds elements only; padding never enters a max
/// and never counts toward an average's denominator. Max routes its gradient
/// to the first maximal element in scan order.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Nearest-neighbour upsampling by an integer factor.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, std::size_t factor = 2);

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;         // (1, C, 1, 1), trainable
  Tensor<T> beta;          // (1, C, 1, 1), trainable
  Tensor<T> running_mean;  // (1, C, 1, 1)
  Tensor<T> running_var;   // (1, C, 1, 1), strictly positive
  double momentum = 0.1;
  double epsilon = 1e-5;

  static BatchNormState create(std::size_t channels);
  std::size_t channels() const { return gamma.shape().c; }
};

enum class Mode { kTrain, kEval };

/// Train mode normalizes with batch statistics over (N, H, W) and updates the
/// running statistics (unbiased variance when more than one sample); eval
/// mode reads the running statistics and leaves them untouched.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BatchNormState<T>& state, Mode mode);

struct Activation {
  enum class Kind { kNone, kRelu, kLeakyRelu };
  Kind kind = Kind::kNone;
  double alpha = 0.0;

  static Activation none() { return {}; }
  static Activation relu() { return {Kind::kRelu, 0.0}; }
  static Activation leaky_relu(double alpha) { return {Kind::kLeakyRelu, alpha}; }
  bool operator==(const Activation&) const = default;
  std::string str() const;
  static Activation parse(const std::string& text);
};

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation act);

/// Channel-wise concatenation in argument order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs);

}  // namespace dign
