#include "repmet/eval/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "repmet/core/error.hpp"

namespace repmet::eval {

std::vector<double> attribute_neighborhood_precision(const diff::Tensor& embeddings,
                                                     const std::vector<std::vector<std::uint8_t>>& attributes,
                                                     std::span<const std::size_t> neighborhood_sizes) {
  const std::size_t n = embeddings.rows();
  if (attributes.size() != n) throw InvalidArgument("attribute precision: one attribute vector per item required");
  for (std::size_t s : neighborhood_sizes) {
    if (s == 0 || s >= n) {
      throw InvalidArgument("attribute precision: neighborhood size " + std::to_string(s) + " invalid for " +
                            std::to_string(n) + " items");
    }
  }
  const std::size_t max_s = neighborhood_sizes.empty()
                                ? 0
                                : *std::max_element(neighborhood_sizes.begin(), neighborhood_sizes.end());

  std::vector<double> totals(neighborhood_sizes.size(), 0.0);
  std::size_t pairs = 0;
  std::vector<std::size_t> order;
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < embeddings.cols(); ++k) {
        const double d = embeddings(i, k) - embeddings(j, k);
        acc += d * d;
      }
      dist[j] = acc;
    }
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(max_s), order.end(),
                      [&](std::size_t a, std::size_t b) { return dist[a] != dist[b] ? dist[a] < dist[b] : a < b; });

    const auto& attrs = attributes[i];
    for (std::size_t a = 0; a < attrs.size(); ++a) {
      if (!attrs[a]) continue;
      ++pairs;
      std::size_t shared = 0;
      std::vector<std::size_t> prefix(max_s + 1, 0);
      for (std::size_t k = 0; k < max_s; ++k) {
        if (attributes[order[k]].size() > a && attributes[order[k]][a]) ++shared;
        prefix[k + 1] = shared;
      }
      for (std::size_t si = 0; si < neighborhood_sizes.size(); ++si) {
        const std::size_t s = neighborhood_sizes[si];
        totals[si] += static_cast<double>(prefix[s]) / static_cast<double>(s);
      }
    }
  }
  if (pairs == 0) throw InvalidArgument("attribute precision: no item has any attribute");
  for (auto& t : totals) t /= static_cast<double>(pairs);
  return totals;
}

double classification_error(const head::RepMetHead& model, const diff::Tensor& inputs,
                            std::span<const head::Label> labels, head::PosteriorMode mode) {
  if (labels.size() != inputs.rows()) throw InvalidArgument("classification_error: label count mismatch");
  if (labels.empty()) throw InvalidArgument("classification_error: empty set");
  const auto outputs = model.infer(inputs, mode);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (labels[i].is_background()) throw InvalidArgument("classification_error: background label");
    if (outputs[i].predicted_class != labels[i].index()) ++wrong;
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(outputs.size());
}

}  // namespace repmet::eval
