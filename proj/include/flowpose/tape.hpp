#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "flowpose/tensor.hpp"

namespace flowpose {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode recording of executed ops.
///
/// Every op appends one node holding its output value and a closure that
/// pushes the output gradient back into its inputs. backward() walks the
/// nodes in exact reverse order. A tape can be differentiated once; call
/// reset() before recording again.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  Var leaf(Tensor value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
    return Var{nodes_.size() - 1};
  }

  /// Records an op output. The closure is kept only if some input needs a
  /// gradient; otherwise the node is a constant.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || requires_grad(v);
    nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(backward) : nullptr});
    return Var{nodes_.size() - 1};
  }
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || requires_grad(v);
    nodes_.push_back(Node{std::move(value), Tensor{}, needs, needs ? std::move(backward) : nullptr});
    return Var{nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient of the last backward() target w.r.t. v; zeros if v received none.
  Tensor grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
  }

  /// Mutable gradient buffer, allocated on first use. For op closures.
  Tensor& grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  /// True if the closure should bother producing a gradient for v.
  bool wants_grad(Var v) const { return node(v).requires_grad; }

  /// Seeds d(target)/d(target) = 1 for a single-element target and runs every
  /// recorded closure in reverse order.
  void backward(Var target) {
    if (backward_done_) throw std::logic_error("backward called twice on the same tape without reset");
    if (value(target).size() != 1) throw std::invalid_argument("backward target must be a scalar");
    backward_done_ = true;
    grad_buffer(target)[0] = 1.0;
    for (std::size_t i = target.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this);
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw std::out_of_range("Var does not belong to this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("Var does not belong to this tape");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace flowpose
