#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "physiofuse/error.hpp"

namespace physiofuse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// One vertex of the computation graph. A node with a backward rule is a
/// recorded operation; a node without one is a leaf.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<NodePtr<T>> inputs;
  /// Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Shared handle to a dense row-major array that may take part in reverse-mode
/// differentiation. Copies alias the same storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Direct write access; only for leaves (parameters, inputs) outside a recorded graph.
  std::span<T> mutable_data() { return node_->value; }

  T item() const;
  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->grad.empty(); }
  /// Gradient buffer; empty when no gradient has reached this tensor.
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// New leaf sharing no storage and carrying no history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const NodePtr<T>& node() const { return node_; }
  const char* op_name() const { return node_->op; }

 private:
  NodePtr<T> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Recorded operations reachable from a root, in topological order
/// (every operation after all of its inputs).
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  const std::vector<Node<T>*>& operations() const { return ops_; }
  std::size_t size() const { return ops_.size(); }

  /// Seeds the root gradient with ones and runs each backward rule once in reverse order.
  void backward();

 private:
  Node<T>* root_ = nullptr;
  std::vector<Node<T>*> ops_;
};

/// Populates grads of every requires_grad leaf reachable from a scalar loss.
/// Gradients accumulate into existing leaf buffers.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {

/// Creates an operation output. Graph edges and the backward rule are kept only
/// when recording is enabled and some input requires a gradient.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                  const char* op, std::function<void(Node<T>&)> backward_rule);

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                  const char* op, std::function<void(Node<T>&)> backward_rule);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace physiofuse
