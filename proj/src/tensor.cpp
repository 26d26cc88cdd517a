#include "cccnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "cccnet/error.hpp"

namespace cccnet {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) {
      throw ShapeError("tensor extents must be positive, got " +
                       shape_str(shape));
    }
  }
}

const Tensor::Node& require(const std::shared_ptr<Tensor::Node>& node) {
  if (!node) throw InvalidArgument("operation on an undefined tensor");
  return *node;
}

Tensor::Node& require_mut(const std::shared_ptr<Tensor::Node>& node) {
  if (!node) throw InvalidArgument("operation on an undefined tensor");
  return *node;
}

}  // namespace

std::span<Scalar> Tensor::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), Scalar{0});
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar{0}, requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<Scalar> data,
                         bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Scalar value) { return full({1}, value); }

const Shape& Tensor::shape() const { return require(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return require(node_).data.size(); }

std::span<const Scalar> Tensor::data() const { return require(node_).data; }

std::span<Scalar> Tensor::mutable_data() { return require_mut(node_).data; }

Scalar Tensor::item() const {
  const auto& n = require(node_);
  if (n.data.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(n.shape));
  }
  return n.data[0];
}

bool Tensor::requires_grad() const { return require(node_).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  require_mut(node_).requires_grad = flag;
}

bool Tensor::has_grad() const {
  const auto& n = require(node_);
  return !n.grad.empty() && n.grad.size() == n.data.size();
}

std::span<const Scalar> Tensor::grad() const {
  if (!has_grad()) throw InvalidArgument("tensor has no gradient");
  return node_->grad;
}

std::span<Scalar> Tensor::mutable_grad() { return require_mut(node_).ensure_grad(); }

void Tensor::zero_grad() {
  auto& n = require_mut(node_);
  n.grad.assign(n.data.size(), Scalar{0});
}

void Tensor::clear_grad() {
  auto& n = require_mut(node_);
  n.grad.clear();
  n.grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  const auto& n = require(node_);
  return from_data(n.shape, n.data, n.requires_grad);
}

Tensor Tensor::detach() const {
  const auto& n = require(node_);
  return from_data(n.shape, n.data, false);
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw InvalidArgument("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (root->consumed) {
    throw InvalidArgument("graph already consumed by a previous backward");
  }
  if (!root->requires_grad) {
    throw InvalidArgument("loss does not depend on any tensor requiring grad");
  }

  // Iterative post-order DFS; parents are visited in recorded order so the
  // resulting schedule depends only on graph structure.
  std::vector<Tensor::Node*> order;
  std::unordered_set<const Tensor::Node*> visited;
  std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += Scalar{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Node* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }

  for (Tensor::Node* node : order) {
    if (node->is_leaf()) continue;
    node->backward_fn = nullptr;
    node->parents.clear();
    node->consumed = true;
    if (node != root.get()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace cccnet
