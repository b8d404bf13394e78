#pragma once

// Dense row-major float64 tensor with tape-based reverse-mode autodiff.
//
// A Tensor is a cheap handle onto shared storage. Operations (see
// tensor_ops.hpp) record a backward closure on their result whenever grad
// mode is enabled and at least one input requires a gradient. backward()
// walks the recorded graph once, deposits gradients on leaves that asked for
// them and then releases the graph.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "slicerec/error.hpp"

namespace slicerec {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace detail {

struct TensorImpl;

struct GradNode {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Receives the node's output; reads out.grad and accumulates into inputs.
  std::function<void(TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;
  std::shared_ptr<GradNode> grad_fn;

  std::vector<double>& grad_buffer() {
    if (!grad) grad.emplace(data.size(), 0.0);
    return *grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), 0.0, requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), 1.0, requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{1}, v, requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Direct mutation is meant for leaves only (initialisation, optimiser
  // updates); doing it on a recorded intermediate invalidates its backward.
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) {
    if (impl_->grad_fn) throw UsageError("requires_grad can only be toggled on leaf tensors");
    impl_->requires_grad = v;
    if (!v) impl_->grad.reset();
  }
  bool is_leaf() const { return !impl_->grad_fn; }

  bool has_grad() const { return impl_->grad.has_value(); }
  std::span<const double> grad() const {
    if (!impl_->grad) throw UsageError("tensor has no gradient");
    return *impl_->grad;
  }
  void zero_grad() { impl_->grad.reset(); }

  /// A new leaf sharing no graph history (data copied).
  Tensor detach() const { return Tensor(shape(), impl_->data, false); }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

  static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

/// Builds an op result and, when needed, records its backward closure.
inline Tensor make_result(Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs,
                          std::function<void(TensorImpl&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  auto node = std::make_shared<GradNode>();
  for (const auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  auto impl = out.impl();
  impl->requires_grad = true;
  impl->grad_fn = std::move(node);
  return out;
}

/// Gradient buffer of an input if it participates in backprop, else null.
inline std::vector<double>* grad_sink(const std::shared_ptr<TensorImpl>& t) {
  return t->requires_grad ? &t->grad_buffer() : nullptr;
}

}  // namespace detail

/// Reverse pass from a scalar. Gradients accumulate on requires-grad leaves;
/// intermediate buffers and the recorded graph are released afterwards.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  using detail::TensorImpl;
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->grad_fn && next < node->grad_fn->inputs.size()) {
      TensorImpl* child = node->grad_fn->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  loss.impl()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->grad_fn) continue;
    if (node->grad) node->grad_fn->backward(*node);
  }
  for (TensorImpl* node : order) {
    if (node->grad_fn) {
      node->grad_fn.reset();
      node->grad.reset();
    }
  }
}

}  // namespace slicerec
