#include "dign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dign/rng.hpp"

namespace dign {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

template <typename T>
void TensorImpl<T>::accumulate_grad(std::span<const T> g) {
  std::span<T> dst = ensure_grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

template <typename T>
std::span<T> TensorImpl<T>::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(shape, T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  return from_data(shape, std::vector<T>(shape.numel(), value));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (data.size() != shape.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " + shape.str());
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
  return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return impl_->ensure_grad();
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(impl_->shape, impl_->data);
}

template <typename T>
Tensor<T> tensor_new(Shape shape, const Fill& how, std::uint64_t seed) {
  if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
    throw ShapeError("tensor_new: zero extent in shape " + shape.str());
  }
  std::vector<T> data(shape.numel());
  Rng rng(seed);
  if (const auto* c = std::get_if<fill::Constant>(&how)) {
    std::fill(data.begin(), data.end(), static_cast<T>(c->value));
  } else if (const auto* u = std::get_if<fill::Uniform>(&how)) {
    if (!(u->lo < u->hi)) throw ContractError("tensor_new: uniform requires lo < hi");
    for (auto& v : data) v = static_cast<T>(rng.uniform(u->lo, u->hi));
  } else if (const auto* g = std::get_if<fill::Gaussian>(&how)) {
    if (!(g->stddev >= 0.0)) throw ContractError("tensor_new: gaussian requires stddev >= 0");
    for (auto& v : data) v = static_cast<T>(rng.gaussian(g->mean, g->stddev));
  }
  return Tensor<T>::from_data(shape, std::move(data));
}

template <typename T>
Tape<T>& Tape<T>::current() {
  thread_local Tape<T> tape;
  return tape;
}

template <typename T>
void Tape<T>::record(OpNode<T> node) {
  node.output->requires_grad = true;
  node.output->is_leaf = false;
  node.output->generation = generation_;
  nodes_.push_back(std::move(node));
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  ++generation_;
}

template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::current().recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
Tensor<T> make_result(const std::string& tag, Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs,
                      std::function<void(std::span<const T>)> backward_fn) {
  Tensor<T> out = Tensor<T>::from_data(shape, std::move(data));
  Tape<T>& tape = Tape<T>::current();
  if (!tape.recording()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!any) return out;

  OpNode<T> node;
  node.tag = tag;
  for (const auto& t : inputs) node.inputs.push_back(t.impl());
  node.output = out.impl();
  std::weak_ptr<TensorImpl<T>> weak_out = out.impl();
  node.backward = [weak_out, fn = std::move(backward_fn)]() {
    auto o = weak_out.lock();
    if (!o || o->grad.empty()) return;
    fn(std::span<const T>(o->grad));
  };
  tape.record(std::move(node));
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a single scalar, got shape " +
                        (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  Tape<T>& tape = Tape<T>::current();
  const auto& impl = loss.impl();
  if (impl->is_leaf || impl->generation != tape.generation_ || tape.nodes_.empty()) {
    throw StateError("backward: loss is not attached to a live graph (already consumed or never recorded)");
  }
  impl->ensure_grad()[0] += T(1);
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) it->backward();
  tape.reset();
}

GradCheckReport grad_check_report(const std::function<Tensor<double>()>& forward, std::vector<Tensor<double>> params,
                                  double eps, std::size_t max_entries, double kink_threshold) {
  Tape<double>::current().reset();
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tensor<double> loss = forward();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  NoGradGuard<double> no_grad;
  const double center = forward().item();
  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::span<double> values = params[k].mutable_data();
    const std::size_t probes = max_entries == 0 ? values.size() : std::min(values.size(), max_entries);
    for (std::size_t j = 0; j < probes; ++j) {
      const std::size_t i = j * values.size() / probes;
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = forward().item();
      values[i] = saved - eps;
      const double minus = forward().item();
      values[i] = saved;
      ++report.probes;
      if (kink_threshold > 0.0) {
        const double right = (plus - center) / eps, left = (center - minus) / eps;
        if (std::abs(right - left) > kink_threshold * std::max(1e-8, std::abs(right) + std::abs(left))) {
          ++report.kinks;
          continue;
        }
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      report.max_rel_error = std::max(report.max_rel_error, err);
    }
  }
  return report;
}

double grad_check(const std::function<Tensor<double>()>& forward, std::vector<Tensor<double>> params, double eps,
                  std::size_t max_entries) {
  return grad_check_report(forward, std::move(params), eps, max_entries, 0.0).max_rel_error;
}

#define DIGN_INSTANTIATE(T)                                                                                   \
  template struct TensorImpl<T>;                                                                              \
  template class Tensor<T>;                                                                                   \
  template class Tape<T>;                                                                                     \
  template Tensor<T> tensor_new<T>(Shape, const Fill&, std::uint64_t);                                        \
  template bool needs_grad<T>(std::initializer_list<const Tensor<T>*>);                                       \
  template Tensor<T> make_result<T>(const std::string&, Shape, std::vector<T>, std::vector<Tensor<T>>,        \
                                    std::function<void(std::span<const T>)>);                                 \
  template void backward<T>(const Tensor<T>&);

DIGN_INSTANTIATE(float)
DIGN_INSTANTIATE(double)
#undef DIGN_INSTANTIATE

}  // namespace dign
