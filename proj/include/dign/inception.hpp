#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dign/module.hpp"

namespace dign {

/// One parallel path of an inception layer. Every branch preserves spatial
/// extent at stride 1; the layer stride is applied by the branch's final
/// convolution (or by the pool in a pooling branch).
struct BranchSpec {
  enum class Kind { kConv, kPoolThenConv, kDecomposedConv };

  Kind kind = Kind::kConv;
  /// Width of the 1x1 reduction in front of the main kernel; 0 for none.
  std::size_t bottleneck = 0;
  /// k for a k x k conv, n for an n x 1 / 1 x n pair. Pool branches use 1 (their conv is 1x1).
  std::size_t kernel = 1;
  /// Channels between the n x 1 and 1 x n halves of a decomposed branch; 0 means out_channels.
  std::size_t mid_channels = 0;
  std::size_t out_channels = 0;

  static BranchSpec conv(std::size_t kernel, std::size_t out, std::size_t bottleneck = 0) {
    return {Kind::kConv, bottleneck, kernel, 0, out};
  }
  static BranchSpec pool(std::size_t out) { return {Kind::kPoolThenConv, 0, 1, 0, out}; }
  static BranchSpec decomposed(std::size_t n, std::size_t out, std::size_t bottleneck = 0, std::size_t mid = 0) {
    return {Kind::kDecomposedConv, bottleneck, n, mid, out};
  }

  std::size_t mid() const { return mid_channels ? mid_channels : out_channels; }
  bool operator==(const BranchSpec&) const = default;
};

struct InceptionSpec {
  std::vector<BranchSpec> branches;
  std::size_t stride = 1;
  Activation activation = Activation::relu();
  bool batch_norm = true;
  NormMode norm_mode = NormMode::kScaled;

  std::size_t out_channels() const;
  /// Throws ConfigError naming the first violated rule.
  void validate() const;

  /// Branches 1x1 -> out/4, 1x1 (in/4) -> 3x3 -> out/2, 1x1 (in/8) -> 5x5 -> out/8,
  /// 3x3 pool -> 1x1 -> the remainder. Requires out >= 8.
  static InceptionSpec standard(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                                Activation act, bool decompose_5x5 = false);

  /// Branch list as text, e.g. "conv(k=1,out=16);conv(k=3,b=8,out=32);pool(out=8)".
  std::string branches_str() const;
  static std::vector<BranchSpec> parse_branches(const std::string& text);
  bool operator==(const InceptionSpec&) const = default;
};

struct ParamCount {
  std::size_t weights = 0;
  /// Part of `weights` held by 1x1 bottleneck reductions.
  std::size_t bottleneck_weights = 0;
  std::size_t biases = 0;
};

/// Exact parameter count of one branch on `in_channels` inputs; `final_bias`
/// says whether the branch's last conv carries a bias.
ParamCount branch_param_count(const BranchSpec& branch, std::size_t in_channels, bool final_bias);

/// Exact parameter count of the layer built from `spec` on `in_channels` inputs.
/// Weights: Cin*Cb + Cb*k*k*Cout for a bottlenecked conv branch,
/// Cin*n*Cm + Cm*n*Cout for a decomposed one. Batch-norm scale/shift are not counted.
ParamCount param_count(const InceptionSpec& spec, std::size_t in_channels);

/// Inception layer over partial convolutions sharing one propagated mask.
template <typename T>
class InceptionLayer : public Block<T> {
 public:
  InceptionLayer(InceptionSpec spec, std::size_t in_channels, std::uint64_t seed);

  MaskedActivation<T> forward(const MaskedActivation<T>& input, Mode mode) override;
  /// Pre-concatenation outputs of each branch, in branch order.
  std::vector<Tensor<T>> branch_outputs(const MaskedActivation<T>& input);
  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) override;
  std::size_t out_channels() const override { return spec_.out_channels(); }

  const InceptionSpec& spec() const { return spec_; }
  std::size_t in_channels() const { return in_channels_; }

 private:
  struct Branch {
    BranchSpec spec;
    std::optional<Conv2dParams<T>> reduce;  // 1x1 bottleneck
    Conv2dParams<T> main;                   // k x k, n x 1, or the pool branch's 1x1
    std::optional<Conv2dParams<T>> second;  // 1 x n of a decomposed branch
  };

  MaskedActivation<T> run_branch(const Branch& b, const MaskedActivation<T>& input) const;
  std::vector<MaskedActivation<T>> run_branches(const MaskedActivation<T>& input) const;
  std::size_t footprint() const;

  InceptionSpec spec_;
  std::size_t in_channels_;
  std::vector<Branch> branches_;
  std::optional<BatchNormState<T>> bn_;
};

}  // namespace dign
