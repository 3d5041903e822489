#include "evuda/autodiff.hpp"

#include <utility>

#include "evuda/errors.hpp"

namespace evuda {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::input(Tensor value) {
  Node node;
  node.op = "input";
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  Var v(this, nodes_.size() - 1);
  inputs_.push_back(v);
  return v;
}

Var Tape::constant(Tensor value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> parents, BackwardFn backward) {
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  for (const Var& p : parents) {
    if (&p.tape() != this) {
      throw ContractError("operation '" + node.op + "' mixes variables from different tapes");
    }
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  node.differentiable = static_cast<bool>(backward);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.shape() != node.value.shape() || node.grad.size() != node.value.size()) {
    node.grad = Tensor(node.value.shape(), 0.0);
  }
  return node.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.grad.size() != node.value.size()) return Tensor(node.value.shape(), 0.0);
  return node.grad;
}

std::vector<Tensor> backward(Tape& tape, Var output) {
  if (&output.tape() != &tape) {
    throw ContractError("backward: output belongs to a different tape");
  }
  if (output.value().size() != 1) {
    throw ContractError("backward: output must be scalar, got shape " + shape_str(output.shape()));
  }
  for (auto& node : tape.nodes_) node.grad = Tensor();

  tape.grad_buffer(output.id())[0] = 1.0;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    auto& node = tape.nodes_[id];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (!node.differentiable) {
      throw UnsupportedOpError("backward: gradient reached non-differentiable op '" + node.op + "'");
    }
    if (node.backward) node.backward(tape, node.grad);
  }

  std::vector<Tensor> grads;
  grads.reserve(tape.inputs_.size());
  for (const Var& in : tape.inputs_) grads.push_back(tape.grad(in));
  return grads;
}

}  // namespace evuda
