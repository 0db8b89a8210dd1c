#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <utility>

#include "strider/tensor.hpp"

namespace strider {

template <typename T>
class Graph;

/// Handle to a value recorded on a Graph.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* g, int id) : graph_(g), id_(id) {}

  Graph<T>& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor<T>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape; }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  int rank() const { return value().rank(); }

 private:
  Graph<T>* graph_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Values are kept for the lifetime of the graph; one
/// graph per forward/backward pass.
template <typename T>
class Graph {
 public:
  // Receives the node's output value and gradient; accumulates into inputs.
  using Backward =
      std::function<void(Graph&, const Tensor<T>& out_value, const Tensor<T>& out_grad)>;

  explicit Graph(bool record_backward = true) : recording_(record_backward) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }

  // Verification mode: every recorded value is checked for NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  /// A leaf that receives a gradient without being a Parameter.
  Var<T> input(Tensor<T> value) { return push(std::move(value), recording_, nullptr, {}); }

  Var<T> parameter(Parameter<T>& p) { return push(p.value, recording_, &p, {}); }

  /// Records an op output. `needs_grad` is true when any input needs one.
  Var<T> record(Tensor<T> value, bool needs_grad, Backward fn) {
    return push(std::move(value), recording_ && needs_grad, nullptr, std::move(fn));
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  bool needs_grad(const Var<T>& v) const { return needs_grad(v.id()); }

  /// Gradient buffer of a node, zero-initialised on first access.
  Tensor<T>& grad(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape);
      n.has_grad = true;
    }
    return n.grad;
  }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].has_grad; }

  /// Seeds d(loss)/d(loss) = 1 and accumulates into Parameter::grad.
  void backward(const Var<T>& loss) {
    if (loss.value().numel() != 1) {
      throw Error(Errc::not_scalar, "backward() needs a scalar loss, got shape " +
                                        shape_str(loss.shape()));
    }
    if (!needs_grad(loss.id())) return;
    grad(loss.id()).data[0] = T(1);
    for (int id = loss.id(); id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.has_grad || !n.needs_grad) continue;
      if (n.backward) n.backward(*this, n.value, n.grad);
      if (n.param != nullptr) {
        auto& dst = n.param->grad.data;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad.data[i];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    Backward backward;
  };

  Var<T> push(Tensor<T> value, bool needs_grad, Parameter<T>* param, Backward fn) {
    if (check_finite_) {
      for (const auto& x : value.data) {
        if (!std::isfinite(x)) {
          throw Error(Errc::non_finite_input, "non-finite value recorded at node " +
                                                  std::to_string(nodes_.size()));
        }
      }
    }
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.param = param;
    if (needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<int>(nodes_.size() - 1));
  }

  std::deque<Node> nodes_;
  bool recording_ = true;
  bool check_finite_ = false;
};

}  // namespace strider
