#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "recon_ood/param_store.hpp"
#include "recon_ood/tensor.hpp"

namespace recon_ood {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
template <typename T>
class Var {
 public:
  Var() = default;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Graph<T>;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Operation tape for reverse-mode differentiation. Nodes are appended in
/// evaluation order, so replaying them backwards is a valid topological order.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(BasicTensor<T> value);
  // Leaf bound to a stored parameter; backward() accumulates into its gradient.
  // Binding the same name twice returns the same node.
  Var<T> param(ParamStore<T>& store, const std::string& name);
  // Read-only view of a stored parameter (no gradient, no copy). The store
  // must outlive the graph.
  Var<T> frozen(const ParamStore<T>& store, const std::string& name);

  // Appends an op result. Throws NumericError if `value` holds NaN/Inf.
  Var<T> record(BasicTensor<T> value, std::vector<std::size_t> parents, BackwardFn backward);

  // Reverse pass from a single-element loss. Parameter gradients accumulate
  // across calls until the store is zeroed.
  void backward(Var<T> loss);

  const BasicTensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.borrowed ? *n.borrowed : n.value;
  }
  // Gradient of the loss w.r.t. node `id` after backward(); zeros if untouched.
  BasicTensor<T> grad(std::size_t id) const;
  // Mutable, lazily allocated gradient buffer used by backward closures.
  BasicTensor<T>& grad_buffer(std::size_t id);
  const BasicTensor<T>& out_grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<T> value;
    const BasicTensor<T>* borrowed = nullptr;
    BasicTensor<T> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const BasicTensor<T>*, std::size_t> bound_;
};

enum class ElementwiseOp { add, sub, mul, silu, tanh };

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
// Equal shapes, or `b` a rank-1 bias matching the last axis of `a`.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> silu(Var<T> a);
template <typename T>
Var<T> tanh(Var<T> a);
template <typename T>
Var<T> exp(Var<T> a);
// Dispatch by tag; unary tags ignore `b`, binary tags require it.
template <typename T>
Var<T> elementwise(ElementwiseOp op, Var<T> a, std::optional<Var<T>> b = std::nullopt);

template <typename T>
Var<T> scale(Var<T> a, double factor);
// Multiplies every element of `a` by the single element of `s`.
template <typename T>
Var<T> scale_by(Var<T> a, Var<T> s);
template <typename T>
Var<T> clamp(Var<T> a, double lo, double hi);

template <typename T>
Var<T> transpose(Var<T> a);
// Concatenates rank-2 inputs with equal row counts along the column axis.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);
// Each row divided by its L2 norm.
template <typename T>
Var<T> normalize_rows(Var<T> a);
template <typename T>
Var<T> log_softmax_rows(Var<T> a);

template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> mean(Var<T> a);
// mean((pred - target)^2) as a one-element tensor.
template <typename T>
Var<T> mse_loss(Var<T> pred, Var<T> target);

// Non-recording helper for plain tensors.
template <typename T>
double mse(const BasicTensor<T>& pred, const BasicTensor<T>& target);

}  // namespace recon_ood
