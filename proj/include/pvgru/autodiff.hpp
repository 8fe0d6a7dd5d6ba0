#pragma once

// Define-by-run reverse-mode differentiation. A Tape is an append-only list of
// nodes; each node owns (or borrows) its forward value and, when any input
// requires a gradient, a closure that pushes the upstream gradient to its inputs.

#include <cassert>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "pvgru/tensor.hpp"

namespace pvgru {

class Tape;
class Gradients;

/// Handle to a node on a tape. A default-constructed Var is "absent".
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  explicit operator bool() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Gradient buffers indexed by node id, produced by backward().
class Gradients {
 public:
  explicit Gradients(std::size_t n = 0) : grads_(n) {}

  bool has(Var v) const { return v && static_cast<std::size_t>(v.id()) < grads_.size() && !grads_[v.id()].empty(); }

  /// Gradient for v; a zero tensor of v's shape if nothing reached it.
  Tensor operator[](Var v) const {
    if (has(v)) return grads_[v.id()];
    return Tensor(v.value().shape());
  }

  const Tensor* find(int id) const {
    if (static_cast<std::size_t>(id) >= grads_.size() || grads_[id].empty()) return nullptr;
    return &grads_[id];
  }

  /// Zero-initialised accumulator for node id.
  Tensor& slot(int id, const Shape& shape) {
    Tensor& g = grads_[id];
    if (g.empty()) g = Tensor(shape);
    return g;
  }

  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<Tensor> grads_;
};


class Tape {
 public:
  /// Called with the upstream gradient of the node and the gradient buffers.
  using BackwardFn = std::function<void(const Tape&, const Tensor&, Gradients&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;

  Var constant(Tensor value) { return push(std::move(value), nullptr, false, {}, nullptr); }

  Var leaf(Tensor value, bool requires_grad = true) {
    return push(std::move(value), nullptr, requires_grad, {}, nullptr);
  }

  /// Leaf that borrows an externally owned tensor; it must outlive the tape.
  Var param(const Tensor& value, bool requires_grad = true) {
    return push(Tensor(), &value, requires_grad, {}, nullptr);
  }

  /// Appends an interior node. The backward closure is dropped when no input
  /// requires a gradient or recording is off.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn fn) {
#ifndef NDEBUG
    assert(value.all_finite() && "non-finite value produced by a forward primitive");
#endif
    bool rg = false;
    for (int i : inputs) rg = rg || nodes_[i].requires_grad;
    if (!rg || !recording_) return push(std::move(value), nullptr, false, {}, nullptr);
    return push(std::move(value), nullptr, true, std::move(inputs), std::move(fn));
  }

  const Tensor& value(int id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.owned;
  }

  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }
  bool has_backward(int id) const { return static_cast<bool>(nodes_[id].backward); }
  std::size_t size() const { return nodes_.size(); }

  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  /// Reverse sweep from a scalar loss; visits each node once in reverse insertion order.
  Gradients backward(Var loss) const {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
    if (loss.value().size() != 1) {
      throw DimensionError("backward requires a scalar loss, got " + shape_string(loss.value().shape()));
    }
    Gradients grads(nodes_.size());
    grads.slot(loss.id(), loss.value().shape()).fill(1.0);
    for (int id = loss.id(); id >= 0; --id) {
      const Node& n = nodes_[id];
      if (!n.backward) continue;
      const Tensor* g = grads.find(id);
      if (!g) continue;
      n.backward(*this, *g, grads);
    }
    return grads;
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  Var push(Tensor owned, const Tensor* borrowed, bool rg, std::vector<int> inputs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(owned), borrowed, rg, std::move(inputs), std::move(fn)});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  bool recording_ = true;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

/// Accumulator for input id, or nullptr when that input does not need a gradient.
inline Tensor* grad_target(const Tape& tape, Gradients& grads, int id) {
  if (!tape.requires_grad(id)) return nullptr;
  return &grads.slot(id, tape.value(id).shape());
}

/// Convenience wrapper mirroring the free-function style used by the ops.
inline Gradients backward(Var loss) { return loss.tape()->backward(loss); }

}  // namespace pvgru
