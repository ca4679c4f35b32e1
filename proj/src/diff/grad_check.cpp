#include "repmet/diff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "repmet/core/error.hpp"

namespace repmet::diff {

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const Objective& f) {
  Graph g(false);
  Var root = f(g);
  return {root.value().item(), g.branch_signature()};
}

}  // namespace

GradCheckReport finite_difference_check(const Objective& f, std::span<Parameter* const> params, double step) {
  if (!(step > 0.0)) throw InvalidArgument("finite_difference_check: step must be positive");

  for (Parameter* p : params) p->zero_grad();
  std::uint64_t base_signature = 0;
  {
    Graph g;
    Var root = f(g);
    if (std::isnan(root.value().item())) throw DegenerateError("finite_difference_check: NaN at base point");
    base_signature = g.branch_signature();
    g.backward(root);
  }

  GradCheckReport report;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const std::string coord = p->name + "[" + std::to_string(i) + "]";
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const Evaluation plus = evaluate(f);
      p->value[i] = saved - step;
      const Evaluation minus = evaluate(f);
      p->value[i] = saved;

      if (std::isnan(plus.value) || std::isnan(minus.value)) {
        throw DegenerateError("finite_difference_check: NaN evaluating coordinate " + coord);
      }
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++report.nonsmooth;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * step);
      const double analytic = p->grad[i];
      const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error || report.worst.empty()) {
        report.max_relative_error = std::max(report.max_relative_error, rel);
        if (rel >= report.max_relative_error) report.worst = coord;
      }
    }
  }
  return report;
}

}  // namespace repmet::diff
