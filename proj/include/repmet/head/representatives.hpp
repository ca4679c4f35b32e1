#pragma once

#include <cstddef>

#include "repmet/core/rng.hpp"
#include "repmet/diff/graph.hpp"
#include "repmet/head/posterior.hpp"

namespace repmet::head {

/// Mode centers R_ij, realized as the weight row of an FC layer of size
/// T·e (T = total modes) that receives the constant scalar input 1; its
/// output is reshaped to T×e, class-major per `layout()`.
class Representatives {
 public:
  Representatives() = default;
  /// i.i.d. N(0, init_std²) initialization.
  Representatives(ModeLayout layout, std::size_t dim, Rng& rng, double init_std = 0.01);
  /// Installs given centers (rows of `values`, class-major).
  static Representatives from_values(ModeLayout layout, const diff::Tensor& values);

  /// Constant-1 input through the FC weights, reshaped to T×e.
  diff::Var forward(diff::Graph& g);
  /// Same as `forward` with the weights as a constant.
  diff::Var forward_frozen(diff::Graph& g) const;
  /// Rescales every center to unit L2 norm (zero rows are left alone).
  void project_to_unit_sphere();

  /// Stored centers as T×e.
  diff::Tensor values() const;

  const ModeLayout& layout() const noexcept { return layout_; }
  std::size_t dim() const noexcept { return dim_; }
  diff::Parameter& weights() noexcept { return weights_; }
  const diff::Parameter& weights() const noexcept { return weights_; }

 private:
  ModeLayout layout_;
  std::size_t dim_ = 0;
  diff::Parameter weights_;  // [1 × T·e]
};

}  // namespace repmet::head
