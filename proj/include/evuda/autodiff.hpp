#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "evuda/tensor.hpp"

namespace evuda {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of primitive operations. A tape is confined to the
/// thread that created it.
class Tape {
 public:
  /// Called during backward with the gradient flowing into the node.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A tracked input: backward reports a gradient for it.
  Var input(Tensor value);
  /// An untracked leaf.
  Var constant(Tensor value);

  /// Records a primitive. A null `backward` marks the op as non-differentiable;
  /// backward raises UnsupportedOpError if gradient reaches it.
  Var record(std::string_view op, Tensor value, std::vector<Var> parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  /// Accumulation buffer for node `id`, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t id);
  /// Gradient accumulated by the last backward pass (zeros if unreached).
  Tensor grad(Var v) const;

  const std::vector<Var>& inputs() const { return inputs_; }
  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(std::size_t id) const { return nodes_[id].op; }

 private:
  friend std::vector<Tensor> backward(Tape& tape, Var output);

  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool differentiable = true;
  };

  // deque keeps node references stable while new nodes are appended.
  std::deque<Node> nodes_;
  std::vector<Var> inputs_;
};

/// Runs reverse accumulation from a scalar output. Returns one gradient per
/// tracked input, in the order the inputs were created.
std::vector<Tensor> backward(Tape& tape, Var output);

}  // namespace evuda
