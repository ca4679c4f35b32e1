#include "repmet/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <limits>
#include <string>

#include "repmet/core/error.hpp"

namespace repmet::diff {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string("op '") + op + "': incompatible shapes " + a.shape_str() + " and " +
                   b.shape_str());
}

void same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw InvalidArgument(std::string("op '") + op + "': operands from different graphs");
}

std::size_t broadcast_dim(std::size_t x, std::size_t y, bool& ok) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  ok = false;
  return 0;
}

// Adds `g` (broadcast shape) into `dst`, summing over dimensions where dst has size 1.
void accumulate_reduced(Tensor& dst, const Tensor& g) {
  const std::size_t R = g.rows(), C = g.cols();
  const bool rb = dst.rows() == 1 && R != 1;
  const bool cb = dst.cols() == 1 && C != 1;
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      dst(rb ? 0 : r, cb ? 0 : c) += g(r, c);
    }
  }
}

inline double at_broadcast(const Tensor& t, std::size_t r, std::size_t c) {
  return t(t.rows() == 1 ? 0 : r, t.cols() == 1 ? 0 : c);
}

template <class F>
Tensor broadcast_apply(const char* op, const Tensor& a, const Tensor& b, F f) {
  bool ok = true;
  const std::size_t R = broadcast_dim(a.rows(), b.rows(), ok);
  const std::size_t C = broadcast_dim(a.cols(), b.cols(), ok);
  if (!ok) shape_error(op, a, b);
  Tensor out(R, C);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) out(r, c) = f(at_broadcast(a, r, c), at_broadcast(b, r, c));
  }
  return out;
}

template <class F>
Var unary(Var a, Tensor value, F local_grad) {
  return a.graph().record(std::move(value), {a.id()}, [local_grad](const BackwardContext& ctx) {
    if (!ctx.in_grads[0]) return;
    Tensor& ga = *ctx.in_grads[0];
    const Tensor& x = *ctx.in_values[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += ctx.out_grad[i] * local_grad(x[i], ctx.out_value[i]);
  });
}

Segments resolve(const Segments& segments, std::size_t cols, const char* op) {
  if (segments.empty()) return {0, cols};
  if (segments.size() < 2 || segments.front() != 0 || segments.back() != cols) {
    throw ShapeError(std::string("op '") + op + "': segments do not cover " + std::to_string(cols) + " columns");
  }
  for (std::size_t s = 0; s + 1 < segments.size(); ++s) {
    if (segments[s] >= segments[s + 1]) {
      throw ShapeError(std::string("op '") + op + "': empty or unordered segment " + std::to_string(s));
    }
  }
  return segments;
}

Reduction reduce_extreme(Var a, const Segments& segments, bool take_max, const char* op) {
  const Tensor& x = a.value();
  const Segments seg = resolve(segments, x.cols(), op);
  const std::size_t S = seg.size() - 1;
  Tensor out(x.rows(), S);
  std::vector<std::size_t> index(x.rows() * S);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t s = 0; s < S; ++s) {
      std::size_t best = seg[s];
      for (std::size_t c = seg[s] + 1; c < seg[s + 1]; ++c) {
        if (take_max ? x(r, c) > x(r, best) : x(r, c) < x(r, best)) best = c;
      }
      out(r, s) = x(r, best);
      index[r * S + s] = best;
      a.graph().note_branch(best);
    }
  }
  Graph& g = a.graph();
  Var v = g.record(std::move(out), {a.id()}, [index, S](const BackwardContext& ctx) {
    if (!ctx.in_grads[0]) return;
    Tensor& ga = *ctx.in_grads[0];
    for (std::size_t r = 0; r < ctx.out_grad.rows(); ++r) {
      for (std::size_t s = 0; s < S; ++s) ga(r, index[r * S + s]) += ctx.out_grad(r, s);
    }
  });
  return {v, std::move(index)};
}

}  // namespace

Segments uniform_segments(std::size_t count, std::size_t width) {
  Segments seg(count + 1);
  for (std::size_t i = 0; i <= count; ++i) seg[i] = i * width;
  return seg;
}

Var add(Var a, Var b) {
  same_graph(a, b, "add");
  Tensor out = broadcast_apply("add", a.value(), b.value(), [](double x, double y) { return x + y; });
  return a.graph().record(std::move(out), {a.id(), b.id()}, [](const BackwardContext& ctx) {
    if (ctx.in_grads[0]) accumulate_reduced(*ctx.in_grads[0], ctx.out_grad);
    if (ctx.in_grads[1]) accumulate_reduced(*ctx.in_grads[1], ctx.out_grad);
  });
}

Var sub(Var a, Var b) {
  same_graph(a, b, "sub");
  Tensor out = broadcast_apply("sub", a.value(), b.value(), [](double x, double y) { return x - y; });
  return a.graph().record(std::move(out), {a.id(), b.id()}, [](const BackwardContext& ctx) {
    if (ctx.in_grads[0]) accumulate_reduced(*ctx.in_grads[0], ctx.out_grad);
    if (ctx.in_grads[1]) {
      Tensor neg = ctx.out_grad;
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
      accumulate_reduced(*ctx.in_grads[1], neg);
    }
  });
}

Var mul(Var a, Var b) {
  same_graph(a, b, "mul");
  Tensor out = broadcast_apply("mul", a.value(), b.value(), [](double x, double y) { return x * y; });
  return a.graph().record(std::move(out), {a.id(), b.id()}, [](const BackwardContext& ctx) {
    const Tensor& x = *ctx.in_values[0];
    const Tensor& y = *ctx.in_values[1];
    const Tensor& g = ctx.out_grad;
    Tensor tmp(g.rows(), g.cols());
    if (ctx.in_grads[0]) {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) tmp(r, c) = g(r, c) * at_broadcast(y, r, c);
      accumulate_reduced(*ctx.in_grads[0], tmp);
    }
    if (ctx.in_grads[1]) {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) tmp(r, c) = g(r, c) * at_broadcast(x, r, c);
      accumulate_reduced(*ctx.in_grads[1], tmp);
    }
  });
}

Var div(Var a, Var b) {
  same_graph(a, b, "div");
  Tensor out = broadcast_apply("div", a.value(), b.value(), [](double x, double y) { return x / y; });
  return a.graph().record(std::move(out), {a.id(), b.id()}, [](const BackwardContext& ctx) {
    const Tensor& x = *ctx.in_values[0];
    const Tensor& y = *ctx.in_values[1];
    const Tensor& g = ctx.out_grad;
    Tensor tmp(g.rows(), g.cols());
    if (ctx.in_grads[0]) {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) tmp(r, c) = g(r, c) / at_broadcast(y, r, c);
      accumulate_reduced(*ctx.in_grads[0], tmp);
    }
    if (ctx.in_grads[1]) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) {
          const double yv = at_broadcast(y, r, c);
          tmp(r, c) = -g(r, c) * at_broadcast(x, r, c) / (yv * yv);
        }
      }
      accumulate_reduced(*ctx.in_grads[1], tmp);
    }
  });
}

Var matmul(Var a, Var b) {
  same_graph(a, b, "matmul");
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (x.cols() != w.rows() || x.cols() == 0) shape_error("matmul", x, w);
  const std::size_t R = x.rows(), K = x.cols(), C = w.cols();
  Tensor out(R, C);
  for (std::size_t r = 0; r < R; ++r) {
    double* o = &out(r, 0);
    // First term assigned, not added, so a single-term product reproduces its
    // factor bit-exactly (including signed zeros).
    const double x0 = x(r, 0);
    const double* w0 = w.row_span(0).data();
    for (std::size_t c = 0; c < C; ++c) o[c] = x0 * w0[c];
    for (std::size_t k = 1; k < K; ++k) {
      const double xv = x(r, k);
      const double* wr = w.row_span(k).data();
      for (std::size_t c = 0; c < C; ++c) o[c] += xv * wr[c];
    }
  }
  return a.graph().record(std::move(out), {a.id(), b.id()}, [R, K, C](const BackwardContext& ctx) {
    const Tensor& x = *ctx.in_values[0];
    const Tensor& w = *ctx.in_values[1];
    const Tensor& g = ctx.out_grad;
    if (Tensor* gx = ctx.in_grads[0]) {
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t k = 0; k < K; ++k) {
          double acc = 0.0;
          const double* wr = w.row_span(k).data();
          const double* gr = g.row_span(r).data();
          for (std::size_t c = 0; c < C; ++c) acc += gr[c] * wr[c];
          (*gx)(r, k) += acc;
        }
      }
    }
    if (Tensor* gw = ctx.in_grads[1]) {
      for (std::size_t r = 0; r < R; ++r) {
        const double* gr = g.row_span(r).data();
        for (std::size_t k = 0; k < K; ++k) {
          const double xv = x(r, k);
          double* dst = &(*gw)(k, 0);
          for (std::size_t c = 0; c < C; ++c) dst[c] += xv * gr[c];
        }
      }
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return unary(a, std::move(out), [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += offset;
  return unary(a, std::move(out), [](double, double) { return 1.0; });
}

Var negate(Var a) { return scale(a, -1.0); }

Var exp(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::exp(v);
  return unary(a, std::move(out), [](double, double y) { return y; });
}

Var log(Var a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > 0.0)) {
      throw DegenerateError("op 'log': non-positive input " + std::to_string(out[i]) + " at index " +
                            std::to_string(i));
    }
    out[i] = std::log(out[i]);
  }
  return unary(a, std::move(out), [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
  Tensor out = a.value();
  std::uint64_t pattern = 14695981039346656037ULL;
  for (auto& v : out.data()) {
    const bool active = v > 0.0;
    if (!active) v = 0.0;
    pattern = (pattern ^ static_cast<std::uint64_t>(active)) * 1099511628211ULL;
  }
  a.graph().note_branch(pattern);
  return unary(a, std::move(out), [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= v;
  return unary(a, std::move(out), [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  Tensor out = a.value();
  std::uint64_t zeros = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 0.0 || std::isnan(out[i])) {
      throw DegenerateError("op 'sqrt': negative input at index " + std::to_string(i));
    }
    if (out[i] == 0.0) ++zeros;
    out[i] = std::sqrt(out[i]);
  }
  a.graph().note_branch(zeros);
  return unary(a, std::move(out), [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var clamp_min(Var a, double floor) {
  Tensor out = a.value();
  std::uint64_t pattern = 14695981039346656037ULL;
  for (auto& v : out.data()) {
    const bool clamped = !(v > floor);
    if (clamped) v = floor;
    pattern = (pattern ^ static_cast<std::uint64_t>(clamped)) * 1099511628211ULL;
  }
  a.graph().note_branch(pattern);
  return unary(a, std::move(out), [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Reduction reduce_max(Var a, const Segments& segments) { return reduce_extreme(a, segments, true, "reduce_max"); }

Reduction reduce_min(Var a, const Segments& segments) { return reduce_extreme(a, segments, false, "reduce_min"); }

Var logsumexp(Var a, const Segments& segments) {
  const Tensor& x = a.value();
  const Segments seg = resolve(segments, x.cols(), "logsumexp");
  const std::size_t S = seg.size() - 1;
  Tensor out(x.rows(), S);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t s = 0; s < S; ++s) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t c = seg[s]; c < seg[s + 1]; ++c) m = std::max(m, x(r, c));
      double acc = 0.0;
      for (std::size_t c = seg[s]; c < seg[s + 1]; ++c) acc += std::exp(x(r, c) - m);
      out(r, s) = m + std::log(acc);
    }
  }
  return a.graph().record(std::move(out), {a.id()}, [seg, S](const BackwardContext& ctx) {
    if (!ctx.in_grads[0]) return;
    const Tensor& x = *ctx.in_values[0];
    Tensor& ga = *ctx.in_grads[0];
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t s = 0; s < S; ++s) {
        const double lse = ctx.out_value(r, s);
        const double g = ctx.out_grad(r, s);
        for (std::size_t c = seg[s]; c < seg[s + 1]; ++c) ga(r, c) += g * std::exp(x(r, c) - lse);
      }
    }
  });
}

Var sum_segments(Var a, const Segments& segments) {
  const Tensor& x = a.value();
  const Segments seg = resolve(segments, x.cols(), "sum_segments");
  const std::size_t S = seg.size() - 1;
  Tensor out(x.rows(), S);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = 0.0;
      for (std::size_t c = seg[s]; c < seg[s + 1]; ++c) acc += x(r, c);
      out(r, s) = acc;
    }
  }
  return a.graph().record(std::move(out), {a.id()}, [seg, S](const BackwardContext& ctx) {
    if (!ctx.in_grads[0]) return;
    Tensor& ga = *ctx.in_grads[0];
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t c = seg[s]; c < seg[s + 1]; ++c) ga(r, c) += ctx.out_grad(r, s);
  });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return a.graph().record(Tensor::scalar(acc), {a.id()}, [](const BackwardContext& ctx) {
    if (!ctx.in_grads[0]) return;
    const double g = ctx.out_grad[0];
    for (auto& v : ctx.in_grads[0]->data()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("op 'mean': empty input");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var pairwise_sq_dist(Var a, Var b) {
  same_graph(a, b, "pairwise_sq_dist");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.cols()) shape_error("pairwise_sq_dist", x, y);
  const std::size_t B = x.rows(), T = y.rows(), E = x.cols();
  Tensor out(B, T);
  for (std::size_t i = 0; i < B; ++i) {
    const double* xi = x.row_span(i).data();
    for (std::size_t t = 0; t < T; ++t) {
      const double* yt = y.row_span(t).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < E; ++k) {
        const double d = xi[k] - yt[k];
        acc += d * d;
      }
      out(i, t) = acc;
    }
  }
  return a.graph().record(std::move(out), {a.id(), b.id()}, [B, T, E](const BackwardContext& ctx) {
    const Tensor& x = *ctx.in_values[0];
    const Tensor& y = *ctx.in_values[1];
    Tensor* gx = ctx.in_grads[0];
    Tensor* gy = ctx.in_grads[1];
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t t = 0; t < T; ++t) {
        const double g = 2.0 * ctx.out_grad(i, t);
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < E; ++k) {
          const double d = g * (x(i, k) - y(t, k));
          if (gx) (*gx)(i, k) += d;
          if (gy) (*gy)(t, k) -= d;
        }
      }
    }
  });
}

Var l2_normalize(Var a, double eps) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (double v : x.row_span(r)) acc += v * v;
    const double n = std::sqrt(acc);
    if (!(n >= eps)) {
      std::ostringstream msg;
      msg << "op 'l2_normalize': row " << r << " has norm " << n << " below " << eps;
      throw DegenerateError(msg.str());
    }
    norms[r] = n;
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) / n;
  }
  return a.graph().record(std::move(out), {a.id()}, [norms](const BackwardContext& ctx) {
    if (!ctx.in_grads[0]) return;
    const Tensor& y = ctx.out_value;
    const Tensor& g = ctx.out_grad;
    Tensor& ga = *ctx.in_grads[0];
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += y(r, c) * g(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += (g(r, c) - y(r, c) * dot) / norms[r];
    }
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tensor out = a.value().reshaped(rows, cols);
  return a.graph().record(std::move(out), {a.id()}, [](const BackwardContext& ctx) {
    if (!ctx.in_grads[0]) return;
    auto dst = ctx.in_grads[0]->data();
    auto src = ctx.out_grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

Var linear(Var x, Var weight, Var bias) {
  if (bias.rows() != 1 || bias.cols() != weight.cols()) shape_error("linear", weight.value(), bias.value());
  return add(matmul(x, weight), bias);
}

}  // namespace repmet::diff
