#pragma once

#include <string>
#include <vector>

#include "dign/pconv.hpp"

namespace dign {

/// A tensor owned by a layer, addressed by its dotted path ("enc3.branch1.conv.weight").
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;  // false for running statistics
};

/// A mask-carrying network layer.
template <typename T>
class Block {
 public:
  virtual ~Block() = default;
  virtual MaskedActivation<T> forward(const MaskedActivation<T>& input, Mode mode) = 0;
  /// Appends every owned tensor under `prefix`.
  virtual void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) = 0;
  virtual std::size_t out_channels() const = 0;
};

/// Appends conv weight/bias under prefix.
template <typename T>
void collect_conv(const std::string& prefix, const Conv2dParams<T>& p, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + ".weight", p.weight, true});
  if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias, true});
}

template <typename T>
void collect_bn(const std::string& prefix, const BatchNormState<T>& s, std::vector<NamedTensor<T>>& out) {
  out.push_back({prefix + ".gamma", s.gamma, true});
  out.push_back({prefix + ".beta", s.beta, true});
  out.push_back({prefix + ".running_mean", s.running_mean, false});
  out.push_back({prefix + ".running_var", s.running_var, false});
}

}  // namespace dign
