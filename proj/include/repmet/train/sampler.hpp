#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "repmet/core/rng.hpp"
#include "repmet/head/posterior.hpp"
#include "repmet/io/dataset.hpp"

namespace repmet::train {

/// Class-balanced batch: M classes, D instances each, plus optional
/// background items for detection-style training.
struct BatchSpec {
  std::size_t classes_per_batch = 12;
  std::size_t instances_per_class = 4;
  std::size_t background_per_batch = 0;

  void validate() const;
};

/// Records available for training, with the head's class numbering.
///
/// Head class k stands for dataset class `classes[k]`; classes tagged
/// "unseen" are never part of a pool.
struct TrainingPool {
  std::vector<std::size_t> classes;               // dataset class index per head class
  std::vector<std::vector<std::size_t>> members;  // record positions per head class
  std::vector<std::size_t> background;
  std::vector<std::vector<std::size_t>> images;  // record positions grouped by image_id, first-seen order
  std::vector<std::string> class_names;

  std::size_t num_classes() const noexcept { return classes.size(); }
  head::Label label_of(const io::Dataset& d, std::size_t record) const;
};

/// Pool of `split` records from seen classes (and background).
TrainingPool make_training_pool(const io::Dataset& dataset, const std::string& split = "train");

/// Exactly M·D foreground positions (then the background items): M distinct
/// classes, D instances of each, drawn without replacement when the class
/// has ≥ D records and with replacement otherwise.
std::vector<std::size_t> sample_batch(const TrainingPool& pool, const BatchSpec& spec, Rng& rng);

/// Every record of randomly drawn images, adding images until the batch
/// holds at least `min_items` records.
std::vector<std::size_t> sample_image_batch(const TrainingPool& pool, Rng& rng, std::size_t min_items = 2);

}  // namespace repmet::train
