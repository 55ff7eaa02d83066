#include "ctxbert/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace ctxbert::autograd {

thread_local bool NoGradGuard::enabled_ = true;

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T{0}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape.empty()) shape = {1};
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  if (numel(shape) != values.size())
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  auto node = std::make_shared<NodeType>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node().data[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), node().data, false);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> values, std::vector<Tensor> inputs,
                                 std::function<void(NodeType&)> backward) {
  Tensor out = from_data(std::move(shape), std::move(values), false);
  if (!NoGradGuard::grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = out.node();
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  // Parents are kept positionally (closures index into them), so inputs that do
  // not require grad stay in the list; backward functions check requires_grad.
  for (auto& in : inputs) node.parents.push_back(in.node_);
  node.backward = std::move(backward);
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  using Node = detail::Node<T>;
  Node& root = loss.node();
  if (root.data.size() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(root.shape));
  if (root.consumed) throw UsageError("backward() called twice on the same graph");
  if (!root.requires_grad) throw UsageError("backward() on a loss that does not require grad");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        if (parent->consumed)
          throw UsageError("backward() through a graph that was already consumed");
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.ensure_grad()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) {
      node->ensure_grad();
      node->backward(*node);
    } else if (node->requires_grad) {
      node->ensure_grad();
    }
  }
  // Interior nodes release their history; leaves keep their grads.
  for (Node* node : order) {
    if (node->backward) {
      node->consumed = true;
      node->backward = nullptr;
      node->parents.clear();
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace ctxbert::autograd
