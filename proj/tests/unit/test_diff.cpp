#include <doctest.h>

#include <cmath>

#include "repmet/core/error.hpp"
#include "repmet/diff/batch_norm.hpp"
#include "repmet/diff/grad_check.hpp"
#include "support.hpp"

using namespace repmet;
using namespace repmet::diff;
using testing::op_gradient_error;
using testing::random_tensor;
using testing::spaced_tensor;

namespace {

constexpr double kPrimitiveTol = 1e-6;

}  // namespace

TEST_CASE("tensor shape rules") {
  Tensor t{{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}};
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t(1, 2) == 6.0);
  CHECK(t.reshaped(3, 2)(2, 1) == 6.0);
  CHECK_THROWS_AS(t.reshaped(4, 2), ShapeError);
  CHECK_THROWS_AS(Tensor(2, 2, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("elementwise primitives match finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t r = 1 + rng.index(4), c = 1 + rng.index(5);
    const Tensor a = random_tensor(rng, r, c), b = random_tensor(rng, r, c, 0.5, 2.0);
    const Tensor pos = random_tensor(rng, r, c, 0.2, 3.0);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return add(v[0], v[1]); }, {a, b}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return sub(v[0], v[1]); }, {a, b}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return mul(v[0], v[1]); }, {a, b}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return div(v[0], v[1]); }, {a, b}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return exp(v[0]); }, {a}, rng) < kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return log(v[0]); }, {pos}, rng) < kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return sqrt(v[0]); }, {pos}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return square(v[0]); }, {a}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return scale(v[0], -2.5); }, {a}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return add_scalar(v[0], 3.0); }, {a}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return negate(v[0]); }, {a}, rng) <
          kPrimitiveTol);
    const Tensor s = spaced_tensor(rng, r, c);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return relu(v[0]); }, {s}, rng) < kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return clamp_min(v[0], 0.01); }, {s}, rng) <
          kPrimitiveTol);
  }
}

TEST_CASE("broadcasting primitives match finite differences") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t r = 2 + rng.index(3), c = 2 + rng.index(3);
    const Tensor m = random_tensor(rng, r, c), row = random_tensor(rng, 1, c, 0.5, 1.5);
    const Tensor col = random_tensor(rng, r, 1, 0.5, 1.5);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return add(v[0], v[1]); }, {m, row}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return mul(v[0], v[1]); }, {m, col}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return div(v[1], v[0]); }, {row, m}, rng) <
          kPrimitiveTol);
  }
}

TEST_CASE("matrix and reduction primitives match finite differences") {
  Rng rng(13);
  for (int trial = 0; trial < 15; ++trial) {
    const std::size_t r = 1 + rng.index(4), k = 1 + rng.index(5), c = 1 + rng.index(4);
    const Tensor a = random_tensor(rng, r, k), b = random_tensor(rng, k, c), bias = random_tensor(rng, 1, c);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }, {a, b}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); },
                            {a, b, bias}, rng) < kPrimitiveTol);
    const Tensor y = random_tensor(rng, 1 + rng.index(4), k);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return pairwise_sq_dist(v[0], v[1]); }, {a, y},
                            rng) < kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return l2_normalize(v[0]); }, {a}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return sum(v[0]); }, {a}, rng) < kPrimitiveTol);
    CHECK(op_gradient_error([](Graph&, const std::vector<Var>& v) { return mean(v[0]); }, {a}, rng) < kPrimitiveTol);
    CHECK(op_gradient_error([&](Graph&, const std::vector<Var>& v) { return reshape(v[0], k, r); }, {a}, rng) <
          kPrimitiveTol);

    const std::size_t segs = 1 + rng.index(3), width = 1 + rng.index(3);
    const Segments seg = uniform_segments(segs, width);
    const Tensor s = spaced_tensor(rng, r, segs * width);
    CHECK(op_gradient_error([&](Graph&, const std::vector<Var>& v) { return reduce_max(v[0], seg).values; }, {s},
                            rng) < kPrimitiveTol);
    CHECK(op_gradient_error([&](Graph&, const std::vector<Var>& v) { return reduce_min(v[0], seg).values; }, {s},
                            rng) < kPrimitiveTol);
    CHECK(op_gradient_error([&](Graph&, const std::vector<Var>& v) { return logsumexp(v[0], seg); }, {s}, rng) <
          kPrimitiveTol);
    CHECK(op_gradient_error([&](Graph&, const std::vector<Var>& v) { return sum_segments(v[0], seg); }, {s}, rng) <
          kPrimitiveTol);
  }
}

TEST_CASE("ragged segments") {
  Graph g;
  Var x = g.input(Tensor{{1.0, 5.0, 2.0, 7.0, 3.0, 4.0}});
  const Segments seg{0, 1, 4, 6};
  const Reduction mx = reduce_max(x, seg);
  CHECK(mx.values.value() == Tensor{{1.0, 7.0, 4.0}});
  CHECK(mx.index == std::vector<std::size_t>{0, 3, 5});
  CHECK(sum_segments(x, seg).value() == Tensor{{1.0, 14.0, 7.0}});
}

TEST_CASE("max and min ties go to the lowest index and route gradient to the winner only") {
  Graph g;
  Var x = g.input(Tensor{{2.0, 2.0, 1.0}});
  Reduction r = reduce_max(x);
  CHECK(r.index == std::vector<std::size_t>{0});
  g.backward(sum(r.values));
  CHECK(g.grad(x) == Tensor{{1.0, 0.0, 0.0}});

  Graph g2;
  Var y = g2.input(Tensor{{3.0, 1.0, 1.0}});
  Reduction m = reduce_min(y);
  CHECK(m.index == std::vector<std::size_t>{1});
}

TEST_CASE("single-term matmul reproduces its factor bit-exactly") {
  Rng rng(5);
  const Tensor w = random_tensor(rng, 1, 12);
  Graph g;
  Var out = matmul(g.constant(Tensor{{1.0}}), g.constant(w));
  CHECK(out.value() == w);
}

TEST_CASE("degenerate inputs raise") {
  Graph g;
  CHECK_THROWS_AS(l2_normalize(g.input(Tensor{{0.0, 0.0}, {1.0, 0.0}})), DegenerateError);
  CHECK_THROWS_AS(log(g.input(Tensor{{1.0, 0.0}})), DegenerateError);
  CHECK_THROWS_AS(add(g.input(Tensor(2, 3)), g.input(Tensor(3, 2))), ShapeError);
  CHECK_THROWS_AS(matmul(g.input(Tensor(2, 3)), g.input(Tensor(2, 3))), ShapeError);
  Var x = g.input(Tensor(2, 2, 1.0));
  CHECK_THROWS(g.backward(x));
}

TEST_CASE("sqrt gradient at zero is zero") {
  Graph g;
  Var x = g.input(Tensor{{0.0, 4.0}});
  g.backward(sum(sqrt(x)));
  CHECK(g.grad(x)(0, 0) == 0.0);
  CHECK(g.grad(x)(0, 1) == doctest::Approx(0.25));
}

TEST_CASE("parameter gradients accumulate until zeroed") {
  Parameter p("p", Tensor{{1.0, 2.0}});
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(sum(square(g.parameter(p))));
  }
  CHECK(p.grad == Tensor{{4.0, 8.0}});
  p.zero_grad();
  CHECK(p.grad == Tensor(1, 2));
}

TEST_CASE("batch norm normalizes in train mode and tracks running statistics") {
  Rng rng(21);
  BatchNorm bn("bn", 3);
  const Tensor x = random_tensor(rng, 6, 3, -2.0, 5.0);
  Graph g;
  const Tensor y = bn.forward(g.input(x, false)).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0, xm = 0.0, xv = 0.0;
    for (std::size_t r = 0; r < 6; ++r) {
      m += y(r, c) / 6.0;
      xm += x(r, c) / 6.0;
    }
    for (std::size_t r = 0; r < 6; ++r) {
      v += (y(r, c) - m) * (y(r, c) - m) / 6.0;
      xv += (x(r, c) - xm) * (x(r, c) - xm) / 5.0;
    }
    CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(bn.running_mean(0, c) == doctest::Approx(0.1 * xm).epsilon(1e-12));
    CHECK(bn.running_var(0, c) == doctest::Approx(0.9 + 0.1 * xv).epsilon(1e-12));
  }

  bn.mode = BnMode::eval;
  const Tensor before_mean = bn.running_mean;
  Graph g2;
  const Tensor z = bn.forward(g2.input(x, false)).value();
  CHECK(bn.running_mean == before_mean);
  CHECK(z(0, 0) == doctest::Approx((x(0, 0) - bn.running_mean(0, 0)) / std::sqrt(bn.running_var(0, 0) + 1e-5)));

  BatchNorm one("one", 2);
  Graph g3;
  CHECK_THROWS(one.forward(g3.input(Tensor(1, 2), false)));
}

TEST_CASE("batch norm gradients match finite differences") {
  Rng rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    BatchNorm bn("bn", 3);
    bn.gamma.value = random_tensor(rng, 1, 3, 0.5, 1.5);
    bn.beta.value = random_tensor(rng, 1, 3);
    const Tensor x = random_tensor(rng, 5, 3, -2.0, 2.0);
    CHECK(op_gradient_error([&](Graph&, const std::vector<Var>& v) { return bn.forward(v[0]); }, {x}, rng) <
          kPrimitiveTol);
    Parameter* params[] = {&bn.gamma, &bn.beta};
    const Tensor w = random_tensor(rng, 5, 3);
    const GradCheckReport report = finite_difference_check(
        [&](Graph& g) { return sum(mul(bn.forward(g.constant(x)), g.constant(w))); }, params);
    CHECK(report.checked == 6);
    CHECK(report.max_relative_error < kPrimitiveTol);
  }
}

TEST_CASE("finite-difference checker catches a wrong backward rule") {
  Parameter p("p", Tensor{{0.3, -0.7}});
  auto doubled_wrong = [](Var a) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= 2.0;
    return a.graph().record(std::move(out), {a.id()}, [](const BackwardContext& ctx) {
      if (Tensor* ga = ctx.in_grads[0]) {
        for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += 3.0 * ctx.out_grad[i];
      }
    });
  };
  Parameter* params[] = {&p};
  const auto report = finite_difference_check([&](Graph& g) { return sum(doubled_wrong(g.parameter(p))); }, params);
  CHECK(report.max_relative_error > 0.3);
}

TEST_CASE("finite-difference checker skips coordinates on a kink") {
  Parameter p("p", Tensor{{0.0, 1.0}});
  Parameter* params[] = {&p};
  const auto report = finite_difference_check([&](Graph& g) { return sum(relu(g.parameter(p))); }, params);
  CHECK(report.nonsmooth == 1);
  CHECK(report.checked == 1);
  CHECK(report.max_relative_error < 1e-9);
}
