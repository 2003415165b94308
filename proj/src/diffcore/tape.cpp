#include "condreg/tape.hpp"

#include <algorithm>

#include "condreg/error.hpp"

namespace condreg {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Tensor value, bool requires_grad, Backward rule) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(rule)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(Tensor value) { return push(std::move(value), true, nullptr); }

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward rule) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ValidationError("operator inputs come from a different tape");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  return push(std::move(value), needs, needs ? std::move(rule) : nullptr);
}

Tensor* Tape::grad_sink(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0f);
  return &n.grad;
}

void Tape::backward(Var root) {
  if (root.value().size() != 1) throw ValidationError("backward() without a seed needs a single-element root");
  backward(root, Tensor(root.value().shape(), 1.0f));
}

void Tape::backward(Var root, const Tensor& seed) {
  if (root.tape() != this) throw ValidationError("root belongs to a different tape");
  if (!seed.same_shape(root.value())) throw ValidationError("backward seed shape does not match root");
  order_.clear();
  if (Tensor* g = grad_sink(root)) {
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += seed[i];
  }
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.rule || n.grad.empty()) continue;
    order_.push_back(id);
    // Rules only touch strictly earlier nodes, so the reference stays put.
    n.rule(*this, n.grad);
  }
}

void Tape::clear_grads() {
  for (Node& n : nodes_) n.grad = Tensor{};
  order_.clear();
}

}  // namespace condreg
