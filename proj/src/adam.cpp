#include "dign/adam.hpp"

#include <cmath>

namespace dign {

template <typename T>
AdamState<T> AdamState<T>::create(const std::vector<NamedTensor<T>>& params, AdamOptions options) {
  AdamState s;
  s.options = options;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    s.names.push_back(p.name);
    s.m.push_back(Tensor<T>::zeros(p.tensor.shape()));
    s.v.push_back(Tensor<T>::zeros(p.tensor.shape()));
  }
  return s;
}

template <typename T>
void adam_step(std::vector<NamedTensor<T>>& params, AdamState<T>& state) {
  std::vector<NamedTensor<T>*> trainable;
  for (auto& p : params)
    if (p.trainable) trainable.push_back(&p);
  if (trainable.size() != state.names.size()) {
    throw StateError("optimizer state tracks " + std::to_string(state.names.size()) + " tensors, got " +
                     std::to_string(trainable.size()));
  }
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    const auto& p = *trainable[i];
    if (p.name != state.names[i] || p.tensor.shape() != state.m[i].shape()) {
      throw StateError("optimizer state does not match parameter " + p.name);
    }
    for (T g : p.tensor.grad())
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in " + p.name);
  }

  const auto& o = state.options;
  ++state.step;
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(o.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(o.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(o.lr), eps = static_cast<T>(o.epsilon);
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    Tensor<T>& param = trainable[i]->tensor;
    const auto g = param.grad();
    auto p = param.mutable_data();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const T m_hat = m[k] / c1;
      const T v_hat = v[k] / c2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::vector<NamedTensor<float>>&, AdamState<float>&);
template void adam_step<double>(std::vector<NamedTensor<double>>&, AdamState<double>&);

}  // namespace dign
