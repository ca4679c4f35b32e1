#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "repmet/diff/tensor.hpp"
#include "repmet/head/head.hpp"

namespace repmet::eval {

/// Mean fraction of an item's s nearest neighbours (Euclidean, self
/// excluded, ties by index) that share an attribute the item has; averaged
/// over every (item, attribute-present) pair. One entry per neighbourhood
/// size. Throws InvalidArgument when a size is ≥ the item count.
std::vector<double> attribute_neighborhood_precision(const diff::Tensor& embeddings,
                                                     const std::vector<std::vector<std::uint8_t>>& attributes,
                                                     std::span<const std::size_t> neighborhood_sizes);

/// Percentage of inputs whose posterior argmax (lowest index on ties) differs
/// from the label, under the given posterior mode. Labels must be foreground.
double classification_error(const head::RepMetHead& model, const diff::Tensor& inputs,
                            std::span<const head::Label> labels, head::PosteriorMode mode);

}  // namespace repmet::eval
