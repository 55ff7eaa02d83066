#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctxbert/error.hpp"

namespace ctxbert::autograd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

}  // namespace detail

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() noexcept : previous_(enabled_) { enabled_ = false; }
  ~NoGradGuard() { enabled_ = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled() noexcept { return enabled_; }

 private:
  bool previous_;
  static thread_local bool enabled_;
};

// Dense row-major array with a handle into the differentiation graph. Copies
// share the underlying node; values are immutable except through the explicit
// mutable_* accessors used by initializers, optimizers and checkpoint loading.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return node().data.size(); }
  // Rank-1 tensors are treated as a single row.
  std::size_t rows() const { return rank() == 1 ? 1 : shape()[0]; }
  std::size_t cols() const { return shape().back(); }

  std::span<const T> data() const { return node().data; }
  std::span<T> mutable_data() { return node().data; }
  T item() const;
  T at(std::size_t row, std::size_t col) const { return node().data[row * cols() + col]; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().ensure_grad(); }
  void zero_grad();

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value) { node().requires_grad = value; }

  // New leaf with a copy of the values and no history.
  Tensor detach() const;

  // Used by op implementations. `inputs` that do not require grad are dropped;
  // if none remain (or recording is disabled) the result is a plain leaf.
  static Tensor make_result(Shape shape, std::vector<T> values, std::vector<Tensor> inputs,
                            std::function<void(NodeType&)> backward);

  NodeType& node() const {
    if (!node_) throw UsageError("use of an undefined tensor");
    return *node_;
  }
  const std::shared_ptr<NodeType>& node_ptr() const noexcept { return node_; }

 private:
  explicit Tensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}
  std::shared_ptr<NodeType> node_;
};

// Reverse sweep from a scalar loss. Gradients accumulate into every reachable
// tensor that requires grad. The graph is consumed: a second call on the same
// loss (or any interior node of it) raises UsageError. Leaf grads keep
// accumulating across graphs until zeroed.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);

}  // namespace ctxbert::autograd
