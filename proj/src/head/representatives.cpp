#include "repmet/head/representatives.hpp"

#include <cmath>

#include "repmet/core/error.hpp"
#include "repmet/diff/ops.hpp"

namespace repmet::head {

using diff::Tensor;

Representatives::Representatives(ModeLayout layout, std::size_t dim, Rng& rng, double init_std)
    : layout_(std::move(layout)), dim_(dim) {
  if (dim_ == 0 || layout_.total_modes() == 0) throw InvalidArgument("Representatives: empty shape");
  Tensor w(1, layout_.total_modes() * dim_);
  for (auto& v : w.data()) v = rng.normal(0.0, init_std);
  weights_ = diff::Parameter("representatives", std::move(w));
}

Representatives Representatives::from_values(ModeLayout layout, const Tensor& values) {
  if (values.rows() != layout.total_modes() || values.cols() == 0) {
    throw ShapeError("Representatives::from_values: " + values.shape_str() + " for " +
                     std::to_string(layout.total_modes()) + " modes");
  }
  for (double v : values.data()) {
    if (!std::isfinite(v)) throw InvalidArgument("Representatives: non-finite value");
  }
  Representatives r;
  r.layout_ = std::move(layout);
  r.dim_ = values.cols();
  r.weights_ = diff::Parameter("representatives", values.reshaped(1, values.size()));
  return r;
}

diff::Var Representatives::forward(diff::Graph& g) {
  diff::Var one = g.constant(Tensor::scalar(1.0));
  return diff::reshape(diff::matmul(one, g.parameter(weights_)), layout_.total_modes(), dim_);
}

diff::Var Representatives::forward_frozen(diff::Graph& g) const {
  diff::Var one = g.constant(Tensor::scalar(1.0));
  return diff::reshape(diff::matmul(one, g.constant(weights_.value)), layout_.total_modes(), dim_);
}

Tensor Representatives::values() const { return weights_.value.reshaped(layout_.total_modes(), dim_); }

void Representatives::project_to_unit_sphere() {
  auto w = weights_.value.data();
  for (std::size_t t = 0; t < layout_.total_modes(); ++t) {
    auto row = w.subspan(t * dim_, dim_);
    double n2 = 0.0;
    for (double v : row) n2 += v * v;
    if (n2 == 0.0) continue;
    const double inv = 1.0 / std::sqrt(n2);
    for (double& v : row) v *= inv;
  }
}

}  // namespace repmet::head
