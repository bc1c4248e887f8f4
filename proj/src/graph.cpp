#include "pgt/graph.hpp"

#include <atomic>

namespace pgt {

namespace {
std::atomic<bool> g_truncation_enabled{true};
}

void set_truncation_enabled(bool enabled) { g_truncation_enabled.store(enabled); }
bool truncation_enabled() { return g_truncation_enabled.load(); }

template <typename T>
Graph<T>::~Graph() {
  if (meter_) meter_->release(activation_elements_);
}

template <typename T>
Node<T>* Graph<T>::push(std::unique_ptr<Node<T>> node) {
  if (node->kind == NodeKind::op) {
    activation_elements_ += node->value.size();
    if (meter_) meter_->add(node->value.size());
  }
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

template <typename T>
Var<T> Graph<T>::constant(Array<T> value) {
  auto n = std::make_unique<Node<T>>();
  n->value = std::move(value);
  n->kind = NodeKind::constant;
  return Var<T>(push(std::move(n)));
}

template <typename T>
Var<T> Graph<T>::variable(Array<T> value) {
  auto n = std::make_unique<Node<T>>();
  n->value = std::move(value);
  n->kind = NodeKind::variable;
  n->requires_grad = true;
  n->grad_buffer();
  return Var<T>(push(std::move(n)));
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  auto n = std::make_unique<Node<T>>();
  n->value = p.value;
  n->kind = NodeKind::parameter;
  n->requires_grad = true;
  n->param = &p;
  return Var<T>(push(std::move(n)));
}

template <typename T>
Var<T> Graph<T>::stop_gradient(Var<T> x) {
  auto n = std::make_unique<Node<T>>();
  n->value = x.value();
  n->kind = NodeKind::stop_gradient;
  n->parents = {x.node()};
  n->requires_grad = !truncation_enabled() && x.requires_grad();
  return Var<T>(push(std::move(n)));
}

template <typename T>
Var<T> Graph<T>::make_op(Array<T> value, std::vector<Var<T>> parents,
                         typename Node<T>::BackwardFn backward) {
  auto n = std::make_unique<Node<T>>();
  n->value = std::move(value);
  n->kind = NodeKind::op;
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    n->requires_grad = n->requires_grad || p.requires_grad();
  }
  n->backward = std::move(backward);
  return Var<T>(push(std::move(n)));
}

template <typename T>
void Graph<T>::backward(Var<T> loss, bool accumulate, T seed) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  for (auto& n : nodes_) {
    switch (n->kind) {
      case NodeKind::variable:
        if (!accumulate) n->grad_buffer().fill(T{0});
        break;
      case NodeKind::parameter:
        if (!accumulate) n->param->zero_grad();
        n->grad = Array<T>();
        break;
      default:
        n->grad = Array<T>();
        break;
    }
  }
  Node<T>* root = loss.node();
  if (!root->requires_grad) return;
  root->grad_buffer()[0] += seed;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& n = **it;
    if (!n.requires_grad || n.grad.empty()) continue;
    switch (n.kind) {
      case NodeKind::op:
        n.backward(n);
        break;
      case NodeKind::stop_gradient: {
        // Only reachable with truncation disabled by the test hook.
        Node<T>* parent = n.parents.front();
        auto& pg = parent->grad_buffer();
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
        break;
      }
      case NodeKind::parameter: {
        auto& g = n.param->grad;
        if (g.shape() != n.value.shape()) g = Array<T>(n.value.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        break;
      }
      default:
        break;
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace pgt
