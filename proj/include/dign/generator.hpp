#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dign/inception.hpp"

namespace dign {

/// Rational channel multiplier used to shrink the network for desk-scale runs.
struct ChannelScale {
  std::size_t num = 1;
  std::size_t den = 1;

  std::size_t apply(std::size_t channels) const;
  std::string str() const;
  static ChannelScale parse(const std::string& text);
  bool operator==(const ChannelScale&) const = default;
};

/// One of the sixteen layers. Encoder entries use `stride`; decoder entries
/// use `upsample` and `skip` (the encoder layer whose output is concatenated
/// in, 0 meaning the masked input image).
struct LayerEntry {
  enum class Kind { kPlain, kInception };

  Kind kind = Kind::kPlain;
  std::size_t kernel = 3;  // plain layers only
  std::size_t stride = 1;
  bool upsample = false;
  std::size_t skip = 0;
  std::size_t out_channels = 0;
  std::size_t expected_spatial = 0;
  Activation activation = Activation::relu();
  bool batch_norm = true;
  std::vector<BranchSpec> branches;  // inception layers only

  bool operator==(const LayerEntry&) const = default;
};

struct GeneratorConfig {
  static constexpr std::size_t kLayersPerHalf = 8;
  static constexpr std::size_t kImageChannels = 3;

  std::size_t input_resolution = 256;
  ChannelScale channel_scale;
  NormMode norm_mode = NormMode::kScaled;
  std::vector<LayerEntry> encoder;
  std::vector<LayerEntry> decoder;

  /// Default schedule. Encoder: 7x7 stem (stride 2), inception layers 2-7
  /// with strides 2,2,1,1,2,2, and a 3x3 layer 8 at stride 2; a stride-2
  /// layer falls back to stride 1 once the extent is odd or 1. For a 256
  /// input the extents are 128, 64, 32, 32, 32, 16, 8, 4, so encoder layers
  /// 4 and 5 and decoder layers 4 and 5 all run at 32. The decoder mirrors
  /// it with LeakyReLU(0.2) and ends in a 3-channel layer without batch norm
  /// or activation. The resolution must be a multiple of 16.
  static GeneratorConfig standard(std::size_t resolution = 256, ChannelScale scale = {});

  /// Input channels of every layer, encoder first.
  std::vector<std::size_t> in_channels() const;
  /// Throws ConfigError naming the offending layer.
  void validate() const;

  /// One `key = value` line per field, in a fixed order.
  std::string canonical_text() const;
  static GeneratorConfig parse(const std::string& text);
  /// FNV-1a of canonical_text().
  std::uint64_t digest() const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Output extent of each of the sixteen layers, derived from geometry alone.
std::vector<std::size_t> spatial_trace(const GeneratorConfig& config);

/// Partial conv + optional batch norm + activation.
template <typename T>
class PlainLayer : public Block<T> {
 public:
  PlainLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
             Activation act, bool batch_norm, NormMode norm_mode, std::uint64_t seed);

  MaskedActivation<T> forward(const MaskedActivation<T>& input, Mode mode) override;
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
  std::size_t out_channels() const override { return conv_.out_channels(); }

 private:
  Conv2dParams<T> conv_;
  std::optional<BatchNormState<T>> bn_;
  Activation act_;
  NormMode norm_mode_;
};

/// The 8 + 8 layer U-net of partial-convolution layers.
template <typename T>
class Generator {
 public:
  Generator(GeneratorConfig config, std::uint64_t seed);

  /// Raw network output F for a batch. The image is zeroed under the mask
  /// before entering the network. `trace` and `inputs`, when given, receive
  /// every layer's output and input (encoder 1-8 then decoder 1-8).
  Tensor<T> forward(const Tensor<T>& image, const Tensor<T>& mask, Mode mode,
                    std::vector<MaskedActivation<T>>* trace = nullptr,
                    std::vector<MaskedActivation<T>>* inputs = nullptr);

  const GeneratorConfig& config() const { return config_; }
  std::size_t layer_count() const { return layers_.size(); }
  /// Layer by 1-based index (1-8 encoder, 9-16 decoder).
  Block<T>& layer(std::size_t index);
  /// The inception layer at a 1-based index, or nullptr for plain layers.
  InceptionLayer<T>* inception_at(std::size_t index);
  std::vector<std::size_t> inception_indices() const;

  /// Every owned tensor, parameters and running statistics, in a fixed order.
  std::vector<NamedTensor<T>> tensors();
  std::vector<NamedTensor<T>> parameters();
  /// FNV-1a over the names and raw bytes of all tensors.
  std::uint64_t weight_digest();

 private:
  GeneratorConfig config_;
  std::vector<std::unique_ptr<Block<T>>> layers_;
};

/// Inference: composite of the known pixels and the network output in the
/// holes, clamped to [0, 1]. Runs in eval mode without recording gradients.
template <typename T>
Tensor<T> inpaint(Generator<T>& gen, const Tensor<T>& image, const Tensor<T>& mask);

/// mask * image + (1 - mask) * output, as a select; differentiable in `output`.
template <typename T>
Tensor<T> composite(const Tensor<T>& image, const Tensor<T>& output, const Tensor<T>& mask);

}  // namespace dign
