#include "repmet/head/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "repmet/core/error.hpp"

namespace repmet::head {

std::size_t Label::index() const {
  if (is_background()) throw InvalidArgument("Label::index on background label");
  return static_cast<std::size_t>(value_);
}

std::string Label::str() const { return is_background() ? "background" : std::to_string(value_); }

std::string to_string(PosteriorMode mode) { return mode == PosteriorMode::max ? "max" : "normalized"; }

PosteriorMode posterior_mode_from_string(const std::string& s) {
  if (s == "max") return PosteriorMode::max;
  if (s == "normalized") return PosteriorMode::normalized;
  throw InvalidArgument("unknown posterior mode '" + s + "' (expected max|normalized)");
}

ModeLayout ModeLayout::uniform(std::size_t classes, std::size_t modes) {
  if (classes == 0 || modes == 0) throw InvalidArgument("ModeLayout: need at least one class and one mode");
  ModeLayout l;
  l.offsets_ = diff::uniform_segments(classes, modes);
  return l;
}

ModeLayout ModeLayout::from_counts(std::span<const std::size_t> counts) {
  if (counts.empty()) throw InvalidArgument("ModeLayout: no classes");
  ModeLayout l;
  l.offsets_.push_back(0);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) throw InvalidArgument("ModeLayout: class " + std::to_string(i) + " has no modes");
    l.offsets_.push_back(l.offsets_.back() + counts[i]);
  }
  return l;
}

std::size_t ModeLayout::class_of_mode(std::size_t mode) const {
  if (mode >= total_modes()) throw InvalidArgument("ModeLayout: mode index out of range");
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), mode);
  return static_cast<std::size_t>(it - offsets_.begin()) - 1;
}

bool ModeLayout::is_uniform() const noexcept {
  for (std::size_t i = 1; i < num_classes(); ++i) {
    if (offsets_[i + 1] - offsets_[i] != offsets_[1] - offsets_[0]) return false;
  }
  return true;
}

std::vector<std::size_t> ModeLayout::counts() const {
  std::vector<std::size_t> c;
  for (std::size_t i = 0; i < num_classes(); ++i) c.push_back(modes_of(i));
  return c;
}

ModeValues::ModeValues(ModeLayout l, std::vector<double> v) : layout(std::move(l)), values(std::move(v)) {
  if (values.size() != layout.total_modes()) throw ShapeError("ModeValues: value count does not match layout");
}

ModeValues::ModeValues(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw ShapeError("ModeValues: no classes");
  const std::size_t k = rows.begin()->size();
  for (const auto& r : rows) {
    if (r.size() != k) throw ShapeError("ModeValues: ragged rows; use the layout constructor");
    values.insert(values.end(), r.begin(), r.end());
  }
  layout = ModeLayout::uniform(rows.size(), k);
}

ModeValues distance_matrix(std::span<const double> embedding, const diff::Tensor& representatives,
                           const ModeLayout& layout) {
  if (representatives.cols() != embedding.size()) {
    throw ShapeError("distance_matrix: embedding dim " + std::to_string(embedding.size()) +
                     " vs representative dim " + std::to_string(representatives.cols()));
  }
  if (representatives.rows() != layout.total_modes()) {
    throw ShapeError("distance_matrix: representative count does not match layout");
  }
  std::vector<double> d(layout.total_modes());
  for (std::size_t t = 0; t < d.size(); ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < embedding.size(); ++k) {
      const double diff = embedding[k] - representatives(t, k);
      acc += diff * diff;
    }
    d[t] = std::sqrt(acc);
  }
  return {layout, std::move(d)};
}

ModeValues mode_probabilities(const ModeValues& distances, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("mode_probabilities: sigma must be positive");
  ModeValues p = distances;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (auto& v : p.values) {
    if (v < 0.0) throw InvalidArgument("mode_probabilities: negative distance");
    v = std::exp(-(v * v) * inv);
  }
  return p;
}

std::vector<double> class_posterior_max(const ModeValues& probs) {
  std::vector<double> out(probs.num_classes());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double best = probs.values[probs.layout.begin(i)];
    for (std::size_t t = probs.layout.begin(i) + 1; t < probs.layout.end(i); ++t) best = std::max(best, probs.values[t]);
    out[i] = best;
  }
  return out;
}

std::vector<double> class_posterior_normalized(const ModeValues& probs) {
  double largest = 0.0;
  for (double v : probs.values) largest = std::max(largest, v);
  if (largest < 1e-300) {
    throw DegenerateError("class_posterior_normalized: every mode probability underflows (< 1e-300)");
  }
  std::vector<double> out(probs.num_classes(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t t = probs.layout.begin(i); t < probs.layout.end(i); ++t) out[i] += probs.values[t];
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

double background_posterior(const ModeValues& probs) {
  double best = -std::numeric_limits<double>::infinity();
  for (double v : probs.values) best = std::max(best, v);
  return 1.0 - best;
}

double margin_loss(const ModeValues& distances, Label label, double margin) {
  if (label.is_background()) return 0.0;
  const std::size_t n = distances.num_classes();
  const std::size_t truth = label.index();
  if (truth >= n) throw InvalidArgument("margin_loss: label " + label.str() + " out of range");
  if (n < 2) throw InvalidArgument("margin_loss: needs at least two classes for a foreground label");
  double correct = std::numeric_limits<double>::infinity();
  double wrong = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = distances.layout.begin(i); t < distances.layout.end(i); ++t) {
      double& target = (i == truth) ? correct : wrong;
      target = std::min(target, distances.values[t]);
    }
  }
  return std::max(0.0, correct - wrong + margin);
}

double cross_entropy_loss(std::span<const double> class_posterior, double background, Label label,
                          PosteriorMode mode) {
  const std::size_t n = class_posterior.size();
  if (!label.is_background() && label.index() >= n) {
    throw InvalidArgument("cross_entropy_loss: label " + label.str() + " out of range for " + std::to_string(n) +
                          " classes");
  }
  double p = 0.0;
  if (mode == PosteriorMode::normalized) {
    if (label.is_background()) throw InvalidArgument("cross_entropy_loss: background label needs max posterior mode");
    p = class_posterior[label.index()];
  } else {
    double total = background;
    for (double v : class_posterior) total += v;
    p = (label.is_background() ? background : class_posterior[label.index()]) / total;
  }
  return -std::log(std::max(p, kProbabilityFloor));
}

}  // namespace repmet::head
