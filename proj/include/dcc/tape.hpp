#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "dcc/error.hpp"
#include "dcc/tensor.hpp"

namespace dcc {

enum class Mode { kTrain, kEval };

template <typename T>
class Tape;

// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

// Deliberate backward corruption, used to prove the gradient checker can fail.
enum class GradientFault { kNone, kConvWeightGrad };

// Reverse-mode tape. Nodes are appended in execution order, so every node's
// inputs precede it and the recorded list is already topologically sorted.
// A tape is single-owner and single-use: record, then call backward() once.
template <typename T>
class Tape {
 public:
  // Receives the tape and the id of the node being differentiated. Reads the
  // node's output gradient and accumulates into its inputs' gradients.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  void set_fault(GradientFault f) { fault_ = f; }
  GradientFault fault() const { return fault_; }

  Var<T> constant(Tensor<T> t) { return push_owned("constant", std::move(t), false); }
  Var<T> input(Tensor<T> t) { return push_owned("input", std::move(t), grad_enabled_); }

  // Borrowed leaf. The referenced tensor must outlive the tape and stay
  // unmodified until backward() returns.
  Var<T> constant_ref(const Tensor<T>& t) {
    Node n;
    n.op = "constant";
    n.external = &t;
    return push(std::move(n));
  }

  // Borrowed leaf whose gradient is accumulated into `p.grad()` by backward()
  // when `p.requires_grad()` is set.
  Var<T> parameter(Tensor<T>& p) {
    Node n;
    n.op = "parameter";
    n.external = &p;
    if (grad_enabled_ && p.requires_grad()) {
      n.requires_grad = true;
      n.sink = &p;
    }
    return push(std::move(n));
  }

  Var<T> record(const char* op, std::vector<std::size_t> inputs, Tensor<T> value, BackwardFn fn) {
    Node n;
    n.op = op;
    for (auto i : inputs) {
      if (i >= nodes_.size()) throw Error("tape node input refers to a later node");
      n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    }
    n.inputs = std::move(inputs);
    n.owned = std::move(value);
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  bool any_requires_grad(std::initializer_list<Var<T>> vars) const {
    for (const auto& v : vars) {
      if (requires_grad(v.id)) return true;
    }
    return false;
  }

  std::size_t size() const { return nodes_.size(); }
  const char* op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }

  // Gradient of the last backward() output w.r.t. node `id`; empty if the node
  // received no gradient.
  const std::vector<T>& grad(std::size_t id) const { return nodes_.at(id).grad; }
  const std::vector<T>& grad(Var<T> v) const { return grad(v.id); }

  // Zero-initialized on first access. For use by backward functions.
  std::vector<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(value(id).size(), T(0));
    return n.grad;
  }

  void backward(Var<T> out) {
    if (out.tape != this) throw Error("backward called with a variable from another tape");
    if (value(out.id).size() != 1) {
      throw ShapeError("backward requires a scalar output, got shape " + shape_str(value(out.id).shape()));
    }
    visits_.clear();
    if (!nodes_[out.id].requires_grad) return;
    grad_buffer(out.id)[0] = T(1);
    for (std::size_t id = out.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      visits_.push_back(id);
      if (n.backward) n.backward(*this, id);
      if (n.sink) {
        auto& g = n.sink->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      }
    }
  }

  // Node ids processed by the last backward(), in processing order.
  const std::vector<std::size_t>& backward_visits() const { return visits_; }

 private:
  struct Node {
    const char* op = "";
    std::vector<std::size_t> inputs;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T>* sink = nullptr;
    bool requires_grad = false;
    std::vector<T> grad;
    BackwardFn backward;
  };

  Var<T> push_owned(const char* op, Tensor<T> t, bool requires_grad) {
    Node n;
    n.op = op;
    n.owned = std::move(t);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  // deque keeps references returned by value() stable while recording.
  std::deque<Node> nodes_;
  std::vector<std::size_t> visits_;
  bool grad_enabled_ = true;
  GradientFault fault_ = GradientFault::kNone;
};

}  // namespace dcc
