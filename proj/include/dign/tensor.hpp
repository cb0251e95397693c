#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dign/error.hpp"

namespace dign {

/// Extents of a dense N-C-H-W tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace fill {
struct Constant {
  double value = 0.0;
};
struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};
struct Gaussian {
  double mean = 0.0;
  double stddev = 1.0;
};
}  // namespace fill

using Fill = std::variant<fill::Constant, fill::Uniform, fill::Gaussian>;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first gradient is accumulated
  bool requires_grad = false;
  bool is_leaf = true;
  // Tape generation that produced this tensor; 0 for leaves.
  std::uint64_t generation = 0;

  void accumulate_grad(std::span<const T> g);
  std::span<T> ensure_grad();
};

/// Shared handle to a dense 4-D tensor.
///
/// Copies alias the same storage. Values produced by operations are never
/// modified after creation; leaf values are modified in place only by the
/// optimizer and by gradient checking.
template <typename T>
class Tensor {
 public:
  using Impl = TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->shape.numel(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = impl_->shape;
    return impl_->data[((n * s.c + c) * s.h + h) * s.w + w];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; all zeros if none has been accumulated yet.
  std::span<const T> grad() const;
  std::span<T> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad();

  /// Copy of the values with no gradient history.
  Tensor detach() const;
  /// Same values at another precision, no gradient history.
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(impl_->data.begin(), impl_->data.end());
    return Tensor<U>::from_data(impl_->shape, std::move(out));
  }

  const std::shared_ptr<Impl>& impl() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

/// tensor_new: deterministic filled tensor.
template <typename T>
Tensor<T> tensor_new(Shape shape, const Fill& how, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Reverse-mode differentiation.

/// One recorded operation.
template <typename T>
struct OpNode {
  std::string tag;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::shared_ptr<TensorImpl<T>> output;
  /// Reads output->grad and accumulates into the inputs that require grad.
  std::function<void()> backward;
};

/// Per-thread operation tape. Nodes are appended in execution order, so the
/// tape is topologically sorted by construction; backward() walks it in
/// reverse and then frees it.
template <typename T>
class Tape {
 public:
  static Tape& current();

  bool recording() const { return enabled_; }
  std::uint64_t generation() const { return generation_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<OpNode<T>>& nodes() const { return nodes_; }

  /// Marks `output` as produced by this tape and stores the node.
  void record(OpNode<T> node);
  /// Drops every recorded node without running backward.
  void reset();

 private:
  template <typename>
  friend class NoGradGuard;
  template <typename U>
  friend void backward(const Tensor<U>& loss);

  std::vector<OpNode<T>> nodes_;
  std::uint64_t generation_ = 1;
  bool enabled_ = true;
};

/// Disables recording on the current thread's tape for its lifetime.
template <typename T>
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Tape<T>::current().enabled_) { Tape<T>::current().enabled_ = false; }
  ~NoGradGuard() { Tape<T>::current().enabled_ = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// True when an op over `inputs` must be recorded.
template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs);

/// Builds the output tensor of an op, recording a node when any input needs
/// gradients. `backward` receives the output gradient.
template <typename T>
Tensor<T> make_result(const std::string& tag, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(std::span<const T> grad_out)> backward);

/// Populates grad on every requires_grad leaf reachable from `loss`, then
/// frees the tape. Throws ContractError for a non-scalar loss and StateError
/// when the graph has already been consumed or the loss was not recorded.
template <typename T>
void backward(const Tensor<T>& loss);

/// Max relative error between analytic gradients and central differences:
/// max over p, i of |a - n| / max(1e-8, |a| + |n|). With `max_entries` > 0,
/// each parameter is probed at that many evenly spaced entries at most.
double grad_check(const std::function<Tensor<double>()>& forward, std::vector<Tensor<double>> params,
                  double eps, std::size_t max_entries = 0);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  /// Probes excluded because the one-sided slopes disagreed.
  std::size_t kinks = 0;
};

/// grad_check with kink screening: a probe whose one-sided differences
/// (f(x+e) - f(x)) / e and (f(x) - f(x-e)) / e differ by more than
/// `kink_threshold` relative to their magnitude lies on a non-differentiable
/// point within reach of e and is counted instead of compared. The screen
/// reads only forward values. A threshold of 0 disables it.
GradCheckReport grad_check_report(const std::function<Tensor<double>()>& forward, std::vector<Tensor<double>> params,
                                  double eps, std::size_t max_entries, double kink_threshold);

}  // namespace dign
