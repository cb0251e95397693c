#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dign/nn.hpp"

namespace dign {

/// Frozen convolutional stack whose intermediate activations stand in for
/// pre-trained perceptual features. Tap index j exposes the output of layer
/// j (1-based); tap 0 is the input itself.
template <typename T>
class FeatureExtractor {
 public:
  struct Layer {
    Conv2dParams<T> conv;
  };

  /// Default: five 3x3 conv + ReLU layers (8, 16, 16, 32, 32 channels; strides
  /// 1, 2, 1, 2, 1), He-normal weights from `seed`, taps after layers 2, 3, 4.
  static FeatureExtractor random(std::uint64_t seed, std::size_t in_channels = 3);
  /// No layers; the single tap is the input.
  static FeatureExtractor identity();
  FeatureExtractor(std::vector<Layer> layers, std::vector<std::size_t> taps, std::size_t in_channels);

  /// Activations at every tap, in tap order.
  std::vector<Tensor<T>> extract(const Tensor<T>& x) const;
  const std::vector<std::size_t>& taps() const { return taps_; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t layer_count() const { return layers_.size(); }

  /// Replaces the weights with tensors named "fx.<layer>.weight" / "fx.<layer>.bias"
  /// from a checkpoint-format file. Shapes must match.
  void load_weights(const std::string& path);
  std::vector<std::pair<std::string, Tensor<T>>> named_weights() const;

 private:
  std::vector<Layer> layers_;
  std::vector<std::size_t> taps_;
  std::size_t in_channels_;
};

struct LossWeights {
  double hole = 6.0;
  double valid = 1.0;
  double perceptual = 0.05;
  double style = 120.0;

  /// Throws ContractError when a weight is negative or all are zero.
  void validate() const;
};

template <typename T>
struct ReconstructionTerms {
  Tensor<T> hole;   // mean |x - output| over hole entries, all channels
  Tensor<T> valid;  // mean |x - output| over valid entries, all channels
};

/// Hole and valid L1 with binary 0/1 masks; a region with no entries contributes 0.
template <typename T>
ReconstructionTerms<T> masked_l1(const Tensor<T>& x, const Tensor<T>& output, const Tensor<T>& mask);

/// Sum over taps j of ||phi_j(yhat) - phi_j(y)||_1 / (C_j H_j W_j), averaged over the batch.
template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& yhat, const Tensor<T>& y, const FeatureExtractor<T>& fx);

/// Per-item Gram matrices, shape (N, 1, C, C): G[a][b] = sum_p F[a,p] F[b,p] / (C H W).
template <typename T>
Tensor<T> gram(const Tensor<T>& features);

/// Sum over taps of ||G_j(yhat) - G_j(y)||_1, averaged over the batch.
template <typename T>
Tensor<T> style_loss(const Tensor<T>& yhat, const Tensor<T>& y, const FeatureExtractor<T>& fx);

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double hole = 0.0;
  double valid = 0.0;
  double perceptual = 0.0;
  double style = 0.0;
};

/// w.hole * hole + w.valid * valid + w.perceptual * perceptual(composite, x)
/// + w.style * style(composite, x). Zero-weighted terms are reported but
/// never enter the total.
template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& x, const Tensor<T>& output, const Tensor<T>& composite,
                            const Tensor<T>& mask, const FeatureExtractor<T>& fx, const LossWeights& w);

}  // namespace dign
