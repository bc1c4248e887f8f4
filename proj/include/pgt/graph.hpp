#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pgt/array.hpp"

namespace pgt {

/// Trainable tensor. The gradient buffer lives here rather than on graph
/// nodes so that accumulation across progressive steps survives graph disposal.
template <typename T>
struct Parameter {
  std::string name;
  Array<T> value;
  Array<T> grad;

  Parameter() = default;
  Parameter(std::string n, Array<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }
};

/// Tracks simultaneously-live activation elements across graphs.
class ActivationMeter {
 public:
  void add(std::size_t n) {
    live_ += n;
    if (live_ > peak_) peak_ = live_;
  }
  void release(std::size_t n) { live_ -= n; }
  std::size_t live() const { return live_; }
  std::size_t peak() const { return peak_; }
  void reset_peak() { peak_ = live_; }

 private:
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
};

enum class NodeKind { constant, variable, parameter, op, stop_gradient };

template <typename T>
struct Node;

/// Non-owning handle to a node of a Graph. Valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Node<T>* n) : node_(n) {}

  const Array<T>& value() const { return node_->value; }
  /// Gradient buffer (zeros until a backward pass reaches the node).
  const Array<T>& grad() const;
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  NodeKind kind() const { return node_->kind; }
  Node<T>* node() const { return node_; }
  explicit operator bool() const { return node_ != nullptr; }

 private:
  Node<T>* node_ = nullptr;
};

template <typename T>
struct Node {
  using BackwardFn = std::function<void(Node&)>;

  Array<T> value;
  Array<T> grad;
  std::vector<Node*> parents;
  BackwardFn backward;
  NodeKind kind = NodeKind::op;
  bool requires_grad = false;
  Parameter<T>* param = nullptr;

  /// Gradient buffer, allocated (zeroed) on first use.
  Array<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Array<T>(value.shape());
    return grad;
  }
};

template <typename T>
const Array<T>& Var<T>::grad() const {
  return node_->grad_buffer();
}

/// Test hook: when disabled, stop_gradient forwards gradients unchanged.
/// Used only by fault-injection checks.
void set_truncation_enabled(bool enabled);
bool truncation_enabled();

/// RAII guard for set_truncation_enabled.
class TruncationOverride {
 public:
  explicit TruncationOverride(bool enabled) : saved_(truncation_enabled()) {
    set_truncation_enabled(enabled);
  }
  ~TruncationOverride() { set_truncation_enabled(saved_); }
  TruncationOverride(const TruncationOverride&) = delete;
  TruncationOverride& operator=(const TruncationOverride&) = delete;

 private:
  bool saved_;
};

/// Reverse-mode tape. Nodes are stored in creation order, which is a
/// topological order, so backward is a single reverse sweep. A graph is
/// built per progressive step and dropped after that step's backward.
template <typename T>
class Graph {
 public:
  explicit Graph(ActivationMeter* meter = nullptr) : meter_(meter) {}
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf with no gradient.
  Var<T> constant(Array<T> value);
  /// Leaf whose gradient is kept on the node (input-gradient probes).
  Var<T> variable(Array<T> value);
  /// Leaf bound to a parameter; backward deposits into parameter.grad.
  Var<T> param(Parameter<T>& p);

  /// Forward identity; backward deposits zero into x.
  Var<T> stop_gradient(Var<T> x);

  /// Appends an op node. `backward` reads node.grad and adds into the
  /// parents' grad buffers; it is only invoked when the node requires grad.
  Var<T> make_op(Array<T> value, std::vector<Var<T>> parents, typename Node<T>::BackwardFn backward);

  /// Reverse sweep from a scalar loss. With accumulate=false every reached
  /// leaf/parameter gradient is zeroed first. `seed` scales dLoss/dLoss.
  void backward(Var<T> loss, bool accumulate, T seed = T{1});

  std::size_t node_count() const { return nodes_.size(); }
  /// Activation elements held by op nodes of this graph.
  std::size_t activation_elements() const { return activation_elements_; }

 private:
  Node<T>* push(std::unique_ptr<Node<T>> node);

  std::vector<std::unique_ptr<Node<T>>> nodes_;
  ActivationMeter* meter_;
  std::size_t activation_elements_ = 0;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace pgt
