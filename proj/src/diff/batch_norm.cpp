#include "repmet/diff/batch_norm.hpp"

#include <cmath>

#include "repmet/core/error.hpp"

namespace repmet::diff {

BatchNorm::BatchNorm(std::string name, std::size_t features, double mom, double eps)
    : momentum(mom),
      epsilon(eps),
      gamma(name + ".gamma", Tensor(1, features, 1.0)),
      beta(name + ".beta", Tensor(1, features, 0.0)),
      running_mean(1, features, 0.0),
      running_var(1, features, 1.0) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw InvalidArgument("BatchNorm: momentum must lie in (0,1)");
  if (!(epsilon > 0.0)) throw InvalidArgument("BatchNorm: epsilon must be positive");
}

Var BatchNorm::forward(Var x) {
  Graph& g = x.graph();
  const Tensor& in = x.value();
  const std::size_t B = in.rows(), F = in.cols();
  if (F != features()) {
    throw ShapeError("op 'batch_norm': input " + in.shape_str() + " for " + std::to_string(features()) + " features");
  }

  Var gv = g.parameter(gamma);
  Var bv = g.parameter(beta);

  if (mode == BnMode::eval) {
    Tensor out(B, F);
    std::vector<double> inv_std(F);
    for (std::size_t f = 0; f < F; ++f) inv_std[f] = 1.0 / std::sqrt(running_var(0, f) + epsilon);
    Tensor xhat(B, F);
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t f = 0; f < F; ++f) {
        xhat(r, f) = (in(r, f) - running_mean(0, f)) * inv_std[f];
        out(r, f) = gamma.value(0, f) * xhat(r, f) + beta.value(0, f);
      }
    }
    return g.record(std::move(out), {x.id(), gv.id(), bv.id()},
                    [inv_std, xhat = std::move(xhat)](const BackwardContext& ctx) {
                      const Tensor& gam = *ctx.in_values[1];
                      const Tensor& go = ctx.out_grad;
                      for (std::size_t r = 0; r < go.rows(); ++r) {
                        for (std::size_t f = 0; f < go.cols(); ++f) {
                          const double gr = go(r, f);
                          if (ctx.in_grads[0]) (*ctx.in_grads[0])(r, f) += gr * gam(0, f) * inv_std[f];
                          if (ctx.in_grads[1]) (*ctx.in_grads[1])(0, f) += gr * xhat(r, f);
                          if (ctx.in_grads[2]) (*ctx.in_grads[2])(0, f) += gr;
                        }
                      }
                    });
  }

  if (B < 2) throw InvalidArgument("op 'batch_norm': train mode needs a batch of at least 2, got " + std::to_string(B));

  std::vector<double> mu(F, 0.0), var(F, 0.0), inv_std(F);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t f = 0; f < F; ++f) mu[f] += in(r, f);
  for (auto& m : mu) m /= static_cast<double>(B);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t f = 0; f < F; ++f) {
      const double d = in(r, f) - mu[f];
      var[f] += d * d;
    }
  }
  for (auto& v : var) v /= static_cast<double>(B);
  for (std::size_t f = 0; f < F; ++f) inv_std[f] = 1.0 / std::sqrt(var[f] + epsilon);

  Tensor xhat(B, F), out(B, F);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t f = 0; f < F; ++f) {
      xhat(r, f) = (in(r, f) - mu[f]) * inv_std[f];
      out(r, f) = gamma.value(0, f) * xhat(r, f) + beta.value(0, f);
    }
  }

  const double unbias = static_cast<double>(B) / static_cast<double>(B - 1);
  for (std::size_t f = 0; f < F; ++f) {
    running_mean(0, f) = momentum * running_mean(0, f) + (1.0 - momentum) * mu[f];
    running_var(0, f) = momentum * running_var(0, f) + (1.0 - momentum) * var[f] * unbias;
  }

  return g.record(std::move(out), {x.id(), gv.id(), bv.id()},
                  [inv_std, xhat = std::move(xhat)](const BackwardContext& ctx) {
                    const Tensor& gam = *ctx.in_values[1];
                    const Tensor& go = ctx.out_grad;
                    const std::size_t B = go.rows(), F = go.cols();
                    const double n = static_cast<double>(B);
                    for (std::size_t f = 0; f < F; ++f) {
                      double sum_g = 0.0, sum_gx = 0.0;
                      for (std::size_t r = 0; r < B; ++r) {
                        sum_g += go(r, f);
                        sum_gx += go(r, f) * xhat(r, f);
                      }
                      if (ctx.in_grads[1]) (*ctx.in_grads[1])(0, f) += sum_gx;
                      if (ctx.in_grads[2]) (*ctx.in_grads[2])(0, f) += sum_g;
                      if (ctx.in_grads[0]) {
                        const double k = gam(0, f) * inv_std[f] / n;
                        for (std::size_t r = 0; r < B; ++r) {
                          (*ctx.in_grads[0])(r, f) += k * (n * go(r, f) - sum_g - xhat(r, f) * sum_gx);
                        }
                      }
                    }
                  });
}

}  // namespace repmet::diff
