#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations in ops.hpp build
// new nodes and, when gradients are enabled and any input requires a
// gradient, record the inputs plus a backward closure on the result. The
// recorded graph is a DAG; backward() walks it once in reverse topological
// order from a scalar root.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dit/rng.hpp"

namespace dit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into its inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

}  // namespace detail

/// Whether operations on this thread record history. Defaults to true.
bool grad_enabled();

/// Disables history recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Enables the post-op NaN/Inf assertion (on by default in debug builds).
void set_finite_checks(bool enabled);
bool finite_checks();

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds float or double");

 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value);
  static Tensor randn(Shape shape, KeyedRng& rng, double stddev = 1.0);
  static Tensor from_node(NodePtr node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Extent along `axis`; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value = true);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();
  const char* op_name() const;

  /// Same values, no history, never requires grad.
  Tensor detach() const;
  /// Deep copy of values (and the requires_grad flag); no history.
  Tensor clone() const;

  /// Accumulates d(root)/d(leaf) into every reachable leaf that requires a
  /// gradient. Intermediate gradients are reset on each call, leaf gradients
  /// are not, so calling twice accumulates twice.
  void backward() const;

  const NodePtr& node() const { return node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  auto src = t.data();
  std::vector<To> out(src.begin(), src.end());
  Tensor<To> result(t.shape(), std::move(out));
  result.set_requires_grad(t.requires_grad());
  return result;
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dit
