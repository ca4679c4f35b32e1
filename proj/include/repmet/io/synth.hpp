#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "repmet/diff/tensor.hpp"
#include "repmet/io/dataset.hpp"

namespace repmet::io {

inline constexpr int kSynthMetaSchemaVersion = 1;

/// Mixture-of-Gaussians generator. Class clusters, unseen-class clusters and
/// clutter clusters all get centers on a sphere of radius center_radius, at
/// least min_separation apart; samples add isotropic noise of std `spread`
/// per coordinate.
struct SynthConfig {
  std::size_t classes = 5;
  std::size_t modes_per_class = 3;
  std::size_t dim = 20;
  std::size_t samples_per_mode = 40;
  double spread = 0.05;
  double center_radius = 1.5;
  double min_separation = 1.0;
  /// Fraction of each cluster's samples tagged split=test (the rest train).
  double test_fraction = 0.0;

  /// Classes tagged group=unseen, numbered after the seen ones.
  std::size_t unseen_classes = 0;
  std::size_t unseen_modes_per_class = 1;
  std::size_t unseen_samples_per_mode = 40;

  /// Background records as a fraction of all foreground records.
  double clutter_fraction = 0.0;
  std::size_t clutter_modes = 4;
  double clutter_spread = 0.05;

  /// Binary attributes per record, shared by all records of a class.
  std::size_t attributes = 0;
  /// Objects grouped per image with boxes in disjoint grid cells; 0 = none.
  std::size_t objects_per_image = 0;

  void validate() const;
};

nlohmann::json synth_config_to_json(const SynthConfig& c);
/// Strict: unknown keys are rejected; missing keys keep their defaults.
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct SynthCluster {
  std::string label;  // class id or "background"
  std::size_t mode = 0;
  bool unseen = false;
  std::vector<double> center;
};

struct SynthData {
  Dataset dataset;
  std::vector<SynthCluster> clusters;
  /// Cluster index of each record, dataset order.
  std::vector<std::size_t> record_cluster;

  /// Centers of the given clusters stacked as rows.
  diff::Tensor centers() const;
};

SynthData synth_dataset(const SynthConfig& config, std::uint64_t seed);

nlohmann::json synth_meta_to_json(const SynthData& data, const SynthConfig& config, std::uint64_t seed);
void save_synth_meta(const std::filesystem::path& path, const SynthData& data, const SynthConfig& config,
                     std::uint64_t seed);

/// Fraction of samples misassigned by nearest-center classification, with
/// `samples` fresh draws from the foreground clusters.
double monte_carlo_bayes_error(const SynthData& data, double spread, std::size_t samples, std::uint64_t seed);

}  // namespace repmet::io
