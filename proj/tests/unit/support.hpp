#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "repmet/core/rng.hpp"
#include "repmet/diff/graph.hpp"
#include "repmet/diff/ops.hpp"
#include "repmet/diff/tensor.hpp"

namespace testing {

using repmet::Rng;
using repmet::diff::Graph;
using repmet::diff::Tensor;
using repmet::diff::Var;

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor normal_tensor(Rng& rng, std::size_t rows, std::size_t cols, double sd = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

/// Entries at least `gap` apart in magnitude and away from zero, so kinks
/// (relu, max, clamp) stay outside a finite-difference step.
inline Tensor spaced_tensor(Rng& rng, std::size_t rows, std::size_t cols, double gap = 0.05) {
  Tensor t(rows, cols);
  const auto order = rng.sample_without_replacement(rows * cols, rows * cols);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double base = (static_cast<double>(order[i]) + 1.0) * gap;
    t[i] = (i % 2 == 0 ? base : -base) + rng.uniform(-gap / 4, gap / 4);
  }
  return t;
}

inline double rel_err(double a, double n) { return std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)}); }

using MultiOp = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Central-difference check of an op against its backward rule. The scalar
/// probed is Σ w ⊙ op(inputs) with fixed random weights w, evaluated from
/// forward values only.
inline double op_gradient_error(const MultiOp& op, const std::vector<Tensor>& inputs, Rng& rng, double h = 1e-6) {
  Tensor weights;
  auto objective = [&](const std::vector<Tensor>& xs) {
    Graph g(false);
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(g.input(x, false));
    const Tensor& y = op(g, vars).value();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
    return s;
  };

  Graph g;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(g.input(x, true));
  Var y = op(g, vars);
  weights = random_tensor(rng, y.rows(), y.cols());
  Var loss = repmet::diff::sum(repmet::diff::mul(y, g.constant(weights)));
  g.backward(loss);

  double worst = 0.0;
  std::vector<Tensor> xs = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = g.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = xs[k][i];
      xs[k][i] = orig + h;
      const double up = objective(xs);
      xs[k][i] = orig - h;
      const double down = objective(xs);
      xs[k][i] = orig;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace testing
