#pragma once

#include <cstddef>
#include <string>

#include "repmet/diff/graph.hpp"

namespace repmet::diff {

enum class BnMode { train, eval };

/// Per-feature batch normalization with learnable affine parameters.
///
/// Train mode normalizes with the (biased) batch statistics and folds them into
/// the running estimates: running = momentum·running + (1−momentum)·batch, with
/// the unbiased batch variance. Eval mode uses only the running estimates.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t features, double momentum = 0.9, double epsilon = 1e-5);

  /// Normalizes the rows of `x` [B×features]. Train mode requires B ≥ 2 and
  /// advances the running statistics.
  Var forward(Var x);

  BnMode mode = BnMode::train;
  double momentum = 0.9;
  double epsilon = 1e-5;
  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

  std::size_t features() const noexcept { return running_mean.cols(); }
};

}  // namespace repmet::diff
