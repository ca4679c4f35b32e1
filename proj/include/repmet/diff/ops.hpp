#pragma once

#include <cstddef>
#include <vector>

#include "repmet/diff/graph.hpp"

namespace repmet::diff {

/// Column partition of a row: segment s spans [offsets[s], offsets[s+1]).
/// An empty offset list means "the whole row is one segment".
using Segments = std::vector<std::size_t>;

Segments uniform_segments(std::size_t count, std::size_t width);

// Elementwise binary ops broadcast a size-1 dimension of either operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var matmul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var negate(Var a);
Var exp(Var a);
/// Natural log; throws DegenerateError on non-positive input.
Var log(Var a);
Var relu(Var a);
Var square(Var a);
/// Square root of a non-negative input. The derivative at exactly 0 is taken
/// as 0 (declared singular point).
Var sqrt(Var a);
Var clamp_min(Var a, double floor);

/// Result of a max/min reduction. `index[r * segments + s]` is the winning
/// absolute column of segment s in row r; ties go to the lowest column.
struct Reduction {
  Var values;
  std::vector<std::size_t> index;
};

Reduction reduce_max(Var a, const Segments& segments = {});
Reduction reduce_min(Var a, const Segments& segments = {});
/// Numerically stable log(sum(exp(x))) per segment.
Var logsumexp(Var a, const Segments& segments = {});
/// Per-segment sums, shape [rows × segments].
Var sum_segments(Var a, const Segments& segments = {});
/// Sum of every entry, 1×1.
Var sum(Var a);
Var mean(Var a);

/// Squared Euclidean distances between rows: [B×e], [T×e] -> [B×T].
Var pairwise_sq_dist(Var a, Var b);
/// Rows scaled to unit L2 norm; throws DegenerateError when a row norm < eps.
Var l2_normalize(Var a, double eps = 1e-12);
Var reshape(Var a, std::size_t rows, std::size_t cols);

/// x·W + b with W [in×out] and b [1×out].
Var linear(Var x, Var weight, Var bias);

}  // namespace repmet::diff
