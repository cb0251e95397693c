#pragma once

#include "dign/tensor.hpp"

namespace dign {

enum class BinaryOp { kAdd, kSub, kMul };

/// result[i] = op(a[i], b[i]); shapes must be equal.
template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kAdd, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kSub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kMul, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value);

/// Sum of all elements as a 1x1x1x1 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// sum_i a[i] * weights[i]; the weights are constants.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, const Tensor<T>& weights);

/// factor * sum_i |a[i] - b[i]|, with sign(0) = 0 as the subgradient.
template <typename T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b, T factor);

/// Per-pixel select with a (N,1,H,W) binary mask broadcast over channels:
/// result = mask ? keep : fill. Implemented as a select, never a product,
/// so values under mask 0 cannot leak into the result.
template <typename T>
Tensor<T> mask_select(const Tensor<T>& mask, const Tensor<T>& keep, const Tensor<T>& fill);

/// Zeroes entries under mask 0 (mask broadcast over channels).
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& x, const Tensor<T>& mask);

/// Forward-only clamp; carries no gradient.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

/// Throws ContractError unless every entry is exactly 0 or 1.
template <typename T>
void require_binary(const Tensor<T>& mask, const char* where);

/// True when no entry is NaN or infinite.
template <typename T>
bool all_finite(const Tensor<T>& x);

}  // namespace dign
