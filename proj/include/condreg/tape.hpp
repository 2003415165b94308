#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "condreg/tensor.hpp"

namespace condreg {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// tape is alive and not cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of executed operators. Each node stores its forward
/// value and, when any input needs a gradient, a rule mapping its output
/// gradient onto input gradients.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  /// Records an operator output. The rule is dropped when no input requires
  /// a gradient, so inference on constants stores values only.
  Var record(Tensor value, std::span<const Var> inputs, Backward rule);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward rule) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(rule));
  }

  /// Seeds d(root)/d(root) = 1 for a single-element root and replays the
  /// tape in reverse. Gradients accumulate across calls until clear_grads().
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  /// Mutable gradient buffer for an input, zero-filled on first use. Null
  /// when the variable does not require a gradient.
  Tensor* grad_sink(Var v);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Node ids whose rules ran during the last backward(), in visit order.
  const std::vector<std::size_t>& last_backward_order() const { return order_; }

  void clear_grads();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward rule;
  };

  Var push(Tensor value, bool requires_grad, Backward rule);

  std::deque<Node> nodes_;
  std::vector<std::size_t> order_;
};

}  // namespace condreg
