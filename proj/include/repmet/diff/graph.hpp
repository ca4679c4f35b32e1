#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "repmet/diff/tensor.hpp"

namespace repmet::diff {

/// A named learnable array living outside any graph. Gradients from
/// `Graph::backward` accumulate into `grad` until `zero_grad` is called.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool decay = false;  // subject to weight decay

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool apply_decay = false)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), decay(apply_decay) {}

  void zero_grad() { grad = Tensor(value.rows(), value.cols()); }
};

class Graph;

/// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward rule sees: the node's output and its incoming gradient,
/// plus parent values and parent gradient accumulators (null when the parent
/// does not require a gradient).
struct BackwardContext {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::span<const Tensor* const> in_values;
  std::span<Tensor* const> in_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Define-by-run computation graph. Nodes are appended in evaluation order,
/// so reverse creation order is a valid topological order for backward.
///
/// Not thread-safe; build one graph per thread.
class Graph {
 public:
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value);
  /// Leaf bound to an external parameter; gradient flows into `p.grad`.
  Var parameter(Parameter& p);
  /// Free leaf whose gradient is kept in the graph (see `grad`).
  Var input(Tensor value, bool requires_grad = true);

  /// Appends an op result. `backward` is dropped when no parent needs a gradient.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id()).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse pass from a 1×1 root. Parameter grads and input-leaf grads
  /// accumulate across calls; intermediate grads are recomputed each time.
  void backward(Var root);

  /// Hash of every discrete branch decision taken during forward (ReLU
  /// activity, max/min winners, clamps). Equal signatures at two points mean
  /// the same smooth piece of the function was evaluated.
  std::uint64_t branch_signature() const noexcept { return signature_; }
  void note_branch(std::uint64_t decision);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool leaf = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  bool record_;
  std::deque<Node> nodes_;  // stable addresses: ops hold value references while appending
  std::uint64_t signature_ = 14695981039346656037ULL;
};

inline const Tensor& Var::value() const { return graph_->value(*this); }
inline bool Var::requires_grad() const { return graph_->requires_grad(*this); }

}  // namespace repmet::diff
