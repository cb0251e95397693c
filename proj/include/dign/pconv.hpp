#pragma once

#include <vector>

#include "dign/nn.hpp"

namespace dign {

/// Features paired with a single-channel binary validity mask (1 = valid).
template <typename T>
struct MaskedActivation {
  Tensor<T> features;  // (N, C, H, W)
  Tensor<T> mask;      // (N, 1, H, W), entries exactly 0 or 1

  /// Throws ShapeError or ContractError when the pair is inconsistent.
  void validate(const char* where) const;
};

/// How a partially valid window is renormalized.
///   kPaper:  multiply by 1 / sum(M)
///   kScaled: multiply by sum(1) / sum(M), sum(1) counting the window's
///            in-bounds elements; an all-valid mask reduces to conv2d
enum class NormMode { kPaper, kScaled };

const char* to_string(NormMode mode);
NormMode parse_norm_mode(const std::string& text);

/// Partial convolution. With X the window values and M its mask:
///   sum(M) > 0:  W^T (X * M) r + b, r per `mode`
///   otherwise:   0, bias suppressed
/// The updated mask is 1 exactly where sum(M) > 0. Values under mask 0 never
/// reach the output or receive gradient.
template <typename T>
MaskedActivation<T> partial_conv2d(const MaskedActivation<T>& input, const Conv2dParams<T>& p,
                                   NormMode mode = NormMode::kScaled);

/// Max pooling over valid in-bounds elements only; windows with no valid
/// element output 0. The mask updates by the same any-valid rule as
/// partial_conv2d with a kernel x kernel window.
template <typename T>
MaskedActivation<T> partial_max_pool2d(const MaskedActivation<T>& input, std::size_t kernel, std::size_t stride,
                                       std::size_t pad);

/// Mask update alone: 1 where the window holds any valid entry.
template <typename T>
Tensor<T> propagate_mask(const Tensor<T>& mask, Pair kernel, Pair stride, Pair padding, Pair dilation = {1, 1});

/// Fraction of valid entries in each mask.
template <typename T>
std::vector<double> mask_coverage(const std::vector<Tensor<T>>& masks);

}  // namespace dign
