#include "physiofuse/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace physiofuse {

namespace {
#if defined(__GLIBC__)
// Graph buffers of a few hundred KiB are created and freed on every step.
// Above the default mmap threshold each one costs fresh page faults.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  return true;
}();
#endif
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw DimensionError("at(r, c): tensor is not rank 2");
  return node_->value.at(r * node_->shape[1] + c);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(node_->shape, node_->value, false);
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  Tape tape;
  tape.root_ = root.node().get();
  // Iterative post-order DFS; post-order of a DAG is a topological order.
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  if (!root.node()->is_leaf()) stack.emplace_back(tape.root_, 0);
  visited.insert(tape.root_);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (!child->is_leaf() && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.ops_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void Tape<T>::backward() {
  if (root_ == nullptr) return;
  for (auto* op : ops_) op->grad.clear();
  auto& g = root_->ensure_grad();
  std::fill(g.begin(), g.end(), T(1));
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node<T>* op = *it;
    if (op->grad.empty()) continue;
    op->backward(*op);
  }
  // Intermediate buffers are released; only leaves keep gradients.
  for (auto* op : ops_) {
    op->grad.clear();
    op->grad.shrink_to_fit();
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to any tensor that requires a gradient");
  }
  if (loss.node()->is_leaf()) {
    loss.node()->ensure_grad()[0] += T(1);
    return;
  }
  Tape<T>::record(loss).backward();
}

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                  const char* op, std::function<void(Node<T>&)> backward_rule) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward_rule);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                  const char* op, std::function<void(Node<T>&)> backward_rule) {
  return make_op(std::move(shape), std::move(value), std::vector<Tensor<T>>(inputs), op,
                 std::move(backward_rule));
}

template Tensor<float> make_op(Shape, std::vector<float>, std::initializer_list<Tensor<float>>,
                               const char*, std::function<void(Node<float>&)>);
template Tensor<double> make_op(Shape, std::vector<double>, std::initializer_list<Tensor<double>>,
                                const char*, std::function<void(Node<double>&)>);
template Tensor<float> make_op(Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                               const char*, std::function<void(Node<float>&)>);
template Tensor<double> make_op(Shape, std::vector<double>, const std::vector<Tensor<double>>&,
                                const char*, std::function<void(Node<double>&)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace physiofuse
