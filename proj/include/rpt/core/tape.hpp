#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rpt/core/parameter.hpp"
#include "rpt/core/tensor.hpp"

namespace rpt {

template <std::floating_point T>
class Tape;

/// Handle to a value recorded on a Tape.
template <std::floating_point T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode record of one forward computation.
///
/// Every differentiable op appends a node holding its output and a closure
/// that pushes the output gradient into its inputs. `backward` walks nodes in
/// reverse order, visiting each exactly once, and finally adds leaf gradients
/// into the bound Parameters. A tape is meant to live for one loss evaluation.
template <std::floating_point T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf bound to `p`. Binding the same parameter twice returns the same leaf.
  Var<T> parameter(Parameter<T>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>{this, it->second};
    const bool trainable = !frozen_.contains(&p);
    Var<T> v = push(p.value, trainable, trainable ? &p : nullptr, {});
    bound_.emplace(&p, v.id);
    return v;
  }

  /// Appends an op output. The closure is dropped when no input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      check_owner(in);
      needs = needs || nodes_[in.id].requires_grad;
    }
    if (check_finite_ && !value.all_finite()) {
      throw NumericalError("non-finite value produced by op #" + std::to_string(nodes_.size()));
    }
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(Var<T> v) const {
    check_owner(v);
    return nodes_[v.id].value;
  }

  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  /// Zero-initialized accumulation buffer for `v`, or nullptr when `v` does not
  /// need a gradient. Only valid during backward.
  T* grad_buffer(Var<T> v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad.data();
  }

  /// Gradient of the last backward pass w.r.t. `v` (zeros if unreached).
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  /// Accumulates d(loss)/d(param) into every bound Parameter reachable from
  /// `loss`. May be called repeatedly; each call adds a full gradient.
  void backward(Var<T> loss) {
    check_owner(loss);
    if (nodes_[loss.id].value.size() != 1) {
      throw ValidationError("backward requires a scalar loss, got shape " +
                            shape_string(nodes_[loss.id].value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Tensor<T>(nodes_[loss.id].value.shape(), T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.param) {
        T* dst = n.param->grad.data();
        const T* src = n.grad.data();
        for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += src[k];
      }
      if (n.backward) n.backward(*this, n.grad);
    }
  }

  /// Later bindings of `p` on this tape become constants (no gradient).
  void freeze(const Parameter<T>& p) { frozen_.insert(&p); }

  std::size_t size() const noexcept { return nodes_.size(); }
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  Var<T> push(Tensor<T> value, bool needs, Parameter<T>* param, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), std::move(fn), param, needs});
    return Var<T>{this, nodes_.size() - 1};
  }

  void check_owner(Var<T> v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw ValidationError("variable from another tape");
  }

  std::deque<Node> nodes_;  // deque keeps value references stable while recording
  std::unordered_map<const Parameter<T>*, std::size_t> bound_;
  std::unordered_set<const Parameter<T>*> frozen_;
  bool check_finite_ = true;
};

}  // namespace rpt
