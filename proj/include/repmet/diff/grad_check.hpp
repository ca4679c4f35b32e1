#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "repmet/diff/graph.hpp"

namespace repmet::diff {

struct GradCheckReport {
  /// max over checked coordinates of |analytic − numeric| / max(1, |analytic|, |numeric|)
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose ± perturbation crossed a kink (ReLU, max/min switch,
  /// clamp); they are reported here and excluded from the error.
  std::size_t nonsmooth = 0;
  std::string worst;  // "param[index]" of the largest error
};

/// Builds the scalar objective into the supplied graph.
using Objective = std::function<Var(Graph&)>;

/// Compares reverse-mode gradients with central differences for every entry
/// of `params`. Zeroes each parameter's grad first. Throws DegenerateError
/// naming the coordinate if any evaluation is NaN.
GradCheckReport finite_difference_check(const Objective& f, std::span<Parameter* const> params,
                                        double step = 1e-5);

}  // namespace repmet::diff
