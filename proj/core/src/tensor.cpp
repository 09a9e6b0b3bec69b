#include "lumenseg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "lumenseg/error.hpp"

namespace lumenseg {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  impl_->data.assign(numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         to_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return impl_->ensure_grad();
}

template <typename T>
void Tensor<T>::backward() {
  if (size() != 1) throw DimensionError("backward() requires a single-element tensor, got " + to_string(shape()));
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::TensorImpl<T>*> order;
  std::unordered_set<detail::TensorImpl<T>*> visited;
  std::vector<std::pair<detail::TensorImpl<T>*, std::size_t>> stack{{impl_.get(), 0}};
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  impl_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(impl_->shape, impl_->data);
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
void Tensor<T>::check_finite(const std::string& context) const {
  for (std::size_t i = 0; i < impl_->data.size(); ++i) {
    if (!std::isfinite(impl_->data[i])) {
      throw NumericError(context + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::from_impl(std::shared_ptr<detail::TensorImpl<T>> impl) {
  Tensor out;
  out.impl_ = std::move(impl);
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace lumenseg
