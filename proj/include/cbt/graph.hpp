#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "cbt/dual.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

// Handle to a value recorded on a Graph.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

// Reverse-mode tape. Every op appends a node holding its forward value and a
// closure that pushes the node's gradient into its inputs. A graph is used for
// one forward/backward pass and then discarded.
//
// The scalar type is a template parameter so the same network code runs in
// float (training), double (gradient checks) and Dual<float> (R1 penalty).
template <class T>
class Graph {
 public:
  using Scalar = T;
  using TrainablePredicate = std::function<bool(const std::string&)>;

  // When `record` is false no backward closures are kept (inference).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  template <class S>
    requires(!std::is_same_v<S, T>)
  Var constant(const Tensor<S>& value) {
    return constant(convert(value));
  }

  // A leaf whose gradient is retained (e.g. the image input of D for R1).
  Var leaf(Tensor<T> value) { return push(std::move(value), record_, {}); }

  // Parameter leaf. Repeated requests for the same name share one node so
  // gradients from every use accumulate.
  Var param(const std::string& name, const Tensor<float>& storage) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
    Tensor<T> value;
    if (overrides_ != nullptr) {
      if (auto it = overrides_->find(name); it != overrides_->end()) value = it->second;
    }
    if (value.empty()) value = convert(storage);
    const bool trainable = record_ && (!trainable_ || trainable_(name));
    Var v = push(std::move(value), trainable, {});
    param_nodes_.emplace(name, v);
    return v;
  }

  void set_trainable(TrainablePredicate pred) { trainable_ = std::move(pred); }
  // Parameter values substituted for the stored float tensors (gradient checks).
  void set_param_overrides(const std::map<std::string, Tensor<T>>* overrides) { overrides_ = overrides; }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() seed w.r.t. v; empty when v received none.
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  // Accumulation buffer for an input's gradient, allocated on first use.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  // Handle the next pushed node will receive; lets an adjoint read its own output.
  Var next_var() const noexcept { return Var{static_cast<int>(nodes_.size())}; }

  using BackwardFn = std::function<void(const Tensor<T>& grad_out)>;

  Var push(Tensor<T> value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad && record_, std::move(backward)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void backward(Var out, Tensor<T> seed) {
    if (seed.shape() != value(out).shape())
      throw DimensionError("backward seed shape " + shape_str(seed.shape()) + " != output shape " +
                           shape_str(value(out).shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    nodes_.at(out.id).grad = std::move(seed);
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(n.grad);
    }
  }

  // Scalar output: seed of one.
  void backward(Var out) { backward(out, Tensor<T>(value(out).shape(), T(1))); }

  // Gradients of every trainable parameter touched by the pass (zeros when a
  // parameter was used but received no gradient).
  std::map<std::string, Tensor<T>> param_grads() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, v] : param_nodes_) {
      const Node& n = nodes_[v.id];
      if (!n.requires_grad) continue;
      out.emplace(name, n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad);
    }
    return out;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  template <class S>
  static Tensor<T> convert(const Tensor<S>& s) {
    std::vector<T> d(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) d[i] = T(static_cast<real_of_t<T>>(s[i]));
    return Tensor<T>(s.shape(), std::move(d));
  }

  bool record_;
  std::deque<Node> nodes_;
  std::map<std::string, Var> param_nodes_;
  TrainablePredicate trainable_;
  const std::map<std::string, Tensor<T>>* overrides_ = nullptr;
};

}  // namespace cbt
