#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cccnet {

// Standard builds train in single precision. Defining CCCNET_HIGH_PRECISION
// compiles the identical code paths in double precision (gradient checks).
#ifdef CCCNET_HIGH_PRECISION
using Scalar = double;
#else
using Scalar = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense channels-first tensor with optional reverse-mode gradient.
///
/// A Tensor is a shared handle: copies alias the same storage and graph
/// node. Use clone() for an independent copy. Operations in ops.hpp record
/// a backward closure whenever any input requires a gradient; backward()
/// walks that graph once and then releases it.
class Tensor {
 public:
  struct Node;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Scalar> data,
                          bool requires_grad = false);
  static Tensor scalar(Scalar value);

  bool defined() const noexcept { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Scalar> data() const;
  /// Writable view of the values. Only meaningful on leaves; mutating an
  /// interior node invalidates its recorded backward closure.
  std::span<Scalar> mutable_data();
  Scalar item() const;
  Scalar at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const Scalar> grad() const;
  std::span<Scalar> mutable_grad();
  /// Sets the gradient buffer to zeros (allocating it if absent).
  void zero_grad();
  /// Drops the gradient buffer entirely.
  void clear_grad();

  /// Independent copy of the values, no graph, same requires_grad flag.
  Tensor clone() const;
  /// Same values, severed from the graph, requires_grad off.
  Tensor detach() const;

  bool same_node(const Tensor& other) const noexcept {
    return node_ == other.node_;
  }

  const std::shared_ptr<Node>& node() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

struct Tensor::Node {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const noexcept { return !backward_fn && parents.empty(); }
  std::span<Scalar> ensure_grad();
};

/// Runs reverse-mode differentiation from a scalar loss. Gradients are
/// accumulated (+=) into every reachable tensor that requires one; the
/// recorded graph is consumed and cannot be replayed.
void backward(const Tensor& loss);

}  // namespace cccnet
