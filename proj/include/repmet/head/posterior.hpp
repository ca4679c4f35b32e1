#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "repmet/diff/ops.hpp"

namespace repmet::head {

/// Class label of an input: a foreground class index or the open background.
class Label {
 public:
  constexpr Label() = default;
  static constexpr Label of(std::size_t cls) { return Label(static_cast<std::int64_t>(cls)); }
  static constexpr Label background() { return Label(-1); }

  constexpr bool is_background() const noexcept { return value_ < 0; }
  /// Class index; throws for background.
  std::size_t index() const;
  std::string str() const;

  constexpr auto operator<=>(const Label&) const = default;

 private:
  constexpr explicit Label(std::int64_t v) : value_(v) {}
  std::int64_t value_ = -1;
};

/// How the per-class posterior is formed from mode probabilities.
enum class PosteriorMode {
  max,         // max over modes; paired with a background posterior
  normalized,  // equally weighted modes, normalized over all classes
};

std::string to_string(PosteriorMode mode);
PosteriorMode posterior_mode_from_string(const std::string& s);

/// Which modes belong to which class. Modes are stored class-major; class i
/// owns columns [begin(i), end(i)). Classes may own different mode counts.
class ModeLayout {
 public:
  ModeLayout() = default;
  static ModeLayout uniform(std::size_t classes, std::size_t modes);
  static ModeLayout from_counts(std::span<const std::size_t> counts);

  std::size_t num_classes() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t total_modes() const noexcept { return offsets_.empty() ? 0 : offsets_.back(); }
  std::size_t begin(std::size_t cls) const { return offsets_.at(cls); }
  std::size_t end(std::size_t cls) const { return offsets_.at(cls + 1); }
  std::size_t modes_of(std::size_t cls) const { return end(cls) - begin(cls); }
  std::size_t class_of_mode(std::size_t mode) const;
  bool is_uniform() const noexcept;
  std::vector<std::size_t> counts() const;
  const diff::Segments& segments() const noexcept { return offsets_; }

  bool operator==(const ModeLayout&) const = default;

 private:
  diff::Segments offsets_;
};

/// One value per (class, mode): distances d_ij or probabilities p_ij.
struct ModeValues {
  ModeLayout layout;
  std::vector<double> values;

  ModeValues() = default;
  ModeValues(ModeLayout l, std::vector<double> v);
  /// Rectangular N×K construction, one inner list per class.
  ModeValues(std::initializer_list<std::initializer_list<double>> rows);

  double at(std::size_t cls, std::size_t mode) const { return values.at(layout.begin(cls) + mode); }
  std::size_t num_classes() const noexcept { return layout.num_classes(); }
};

// Reference (non-differentiable) forms of the head computations for a single
// input. The training graph in head.hpp computes the same quantities in batch.

/// Euclidean distances from `embedding` to every row of `representatives` [T×e].
ModeValues distance_matrix(std::span<const double> embedding, const diff::Tensor& representatives,
                           const ModeLayout& layout);
/// p_ij = exp(−d_ij² / (2σ²)).
ModeValues mode_probabilities(const ModeValues& distances, double sigma);
/// Entry i = max_j p_ij.
std::vector<double> class_posterior_max(const ModeValues& probs);
/// Entry i = Σ_j p_ij / Σ_ij p_ij. Throws DegenerateError when every entry is
/// below 1e-300 (use the log-space path of the head for such inputs).
std::vector<double> class_posterior_normalized(const ModeValues& probs);
/// 1 − max_ij p_ij.
double background_posterior(const ModeValues& probs);
/// |min_j d_{i*j} − min_{i≠i*, j} d_ij + α|₊; background labels give 0.
double margin_loss(const ModeValues& distances, Label label, double margin);
/// −log of the true-label probability, floored at 1e-12. In `max` mode the
/// (N+1)-vector [class posteriors, background] is renormalized first.
double cross_entropy_loss(std::span<const double> class_posterior, double background, Label label,
                          PosteriorMode mode);

inline constexpr double kProbabilityFloor = 1e-12;

}  // namespace repmet::head
