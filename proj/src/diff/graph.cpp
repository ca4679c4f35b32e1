#include "repmet/diff/graph.hpp"

#include "repmet/core/error.hpp"

namespace repmet::diff {

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.leaf = true;
  n.requires_grad = record_ && p.trainable;
  n.param = &p;
  if (n.requires_grad) n.grad = Tensor(p.value.rows(), p.value.cols());
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = record_ && requires_grad;
  if (n.requires_grad) n.grad = Tensor(n.value.rows(), n.value.cols());
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (std::size_t p : parents) {
      if (nodes_.at(p).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Graph::note_branch(std::uint64_t decision) {
  // FNV-1a step over the 8 bytes of the decision word.
  for (int i = 0; i < 8; ++i) {
    signature_ ^= (decision >> (8 * i)) & 0xFFu;
    signature_ *= 1099511628211ULL;
  }
}

void Graph::backward(Var root) {
  if (!record_) throw InvalidArgument("backward: graph was built without gradient recording");
  if (root.id() >= nodes_.size()) throw InvalidArgument("backward: root not in this graph");
  Node& r = nodes_[root.id()];
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ShapeError("backward: root must be scalar, got " + r.value.shape_str());
  }
  if (!r.requires_grad) return;

  for (std::size_t i = 0; i <= root.id(); ++i) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (!n.leaf || n.param) n.grad = Tensor(n.value.rows(), n.value.cols());
  }
  r.grad(0, 0) += 1.0;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.leaf) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t p : n.parents) {
      Node& parent = nodes_[p];
      in_values.push_back(&parent.value);
      in_grads.push_back(parent.requires_grad ? &parent.grad : nullptr);
    }
    n.backward(BackwardContext{n.value, n.grad, in_values, in_grads});
  }

  for (std::size_t i = 0; i <= root.id(); ++i) {
    Node& n = nodes_[i];
    if (!n.param || !n.requires_grad) continue;
    Tensor& target = n.param->grad;
    if (!target.same_shape(n.value)) target = Tensor(n.value.rows(), n.value.cols());
    auto dst = target.data();
    auto src = n.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

}  // namespace repmet::diff
