#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "seadet/tensor.hpp"

namespace seadet {

// Trainable tensor with an accumulated gradient of the same shape.
template <class S>
struct ParameterT {
  TensorT<S> value;
  TensorT<S> gradient;
  std::string name;

  ParameterT() = default;
  ParameterT(std::string n, TensorT<S> v)
      : value(std::move(v)), gradient(value.shape()), name(std::move(n)) {}

  void reset_gradient() { gradient.data().setZero(); }
};

template <class S>
class TapeT;

// Handle to a value recorded on a tape.
template <class S>
struct VarT {
  TapeT<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
};

// Record of executed differentiable operations. Forward values live on the
// tape; backward() replays the records in reverse and accumulates gradients
// into every reachable parameter. Single writer per tape.
template <class S>
class TapeT {
 public:
  using Var = VarT<S>;

  using BackpropFn = std::function<void(TapeT&, VarT<S>)>;

  struct Node {
    TensorT<S> value;
    TensorT<S> grad;  // allocated lazily, same shape as value
    BackpropFn backprop;
    ParameterT<S>* param = nullptr;
    bool requires_grad = false;
  };

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  Var constant(TensorT<S> value) { return push(std::move(value), false, nullptr); }

  // Leaf that participates in differentiation but is not bound to a parameter
  // (e.g. an input image when input gradients are wanted).
  Var input(TensorT<S> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad && grad_enabled_, nullptr);
  }

  Var parameter(ParameterT<S>& p) { return push(p.value, grad_enabled_, &p); }

  const TensorT<S>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

  // Gradient accumulated at a node by the last backward(); zero tensor if the
  // node was unreachable.
  const TensorT<S>& grad(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    ensure_grad(n);
    return n.grad;
  }

  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  // Called by ops: records a computed value together with its backward rule.
  // The rule is dropped entirely when no input needs gradients.
  Var record(TensorT<S> value, const std::vector<Var>& inputs, BackpropFn backprop) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& in : inputs) needs = needs || nodes_[static_cast<std::size_t>(in.id)].requires_grad;
    }
    Var v = push(std::move(value), needs, nullptr);
    if (needs) nodes_[static_cast<std::size_t>(v.id)].backprop = std::move(backprop);
    return v;
  }

  // Accumulate into a node's gradient during backprop.
  TensorT<S>& grad_buffer(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    ensure_grad(n);
    return n.grad;
  }

  // Reverse sweep from a scalar loss into this tape's node gradients only.
  // Touches nothing outside the tape, so sweeps over disjoint tapes may run
  // concurrently even when they share parameters; pair with a later
  // flush_parameter_gradients() from the single writer.
  void backward_local(Var loss) {
    check(!empty(), "backward on an empty tape");
    check(loss.tape == this, "loss recorded on a different tape");
    Node& top = nodes_[static_cast<std::size_t>(loss.id)];
    check(top.value.is_scalar(), "backward expects a scalar loss");
    ensure_grad(top);
    top.grad.data().setConstant(S(1));
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backprop && n.grad.numel() > 0) n.backprop(*this, Var{this, static_cast<int>(i)});
    }
  }

  // Add the swept node gradients into their bound parameters.
  void flush_parameter_gradients() {
    for (Node& n : nodes_) {
      if (n.param != nullptr && n.grad.numel() > 0)
        n.param->gradient.data() += n.grad.data();
    }
  }

  // Reverse sweep from a scalar loss. Every reachable parameter gets its
  // gradient accumulated; untouched parameters keep whatever was there
  // (all-zero right after reset_gradient()).
  void backward(Var loss) {
    backward_local(loss);
    flush_parameter_gradients();
  }

 private:
  Var push(TensorT<S> value, bool needs_grad, ParameterT<S>* param) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs_grad || (param != nullptr && grad_enabled_);
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  static void ensure_grad(Node& n) {
    if (n.grad.numel() == 0) n.grad = TensorT<S>(n.value.shape());
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

template <class S>
void backward_pass(TapeT<S>& tape, VarT<S> loss) {
  tape.backward(loss);
}

using Parameter = ParameterT<Real>;
using Tape = TapeT<Real>;
using Var = VarT<Real>;

}  // namespace seadet
