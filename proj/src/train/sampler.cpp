#include "repmet/train/sampler.hpp"

#include <unordered_map>

#include "repmet/core/error.hpp"

namespace repmet::train {

void BatchSpec::validate() const {
  if (classes_per_batch < 2) throw InvalidArgument("batch: classes_per_batch (M) must be >= 2");
  if (instances_per_class < 1) throw InvalidArgument("batch: instances_per_class (D) must be >= 1");
}

head::Label TrainingPool::label_of(const io::Dataset& d, std::size_t record) const {
  const head::Label l = d.label_of(record);
  if (l.is_background()) return l;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (classes[k] == l.index()) return head::Label::of(k);
  }
  throw InvalidArgument("training pool: record '" + d.records()[record].id + "' belongs to no training class");
}

TrainingPool make_training_pool(const io::Dataset& dataset, const std::string& split) {
  TrainingPool pool;
  std::vector<std::ptrdiff_t> head_class(dataset.num_classes(), -1);
  std::unordered_map<std::string, std::size_t> image_slot;
  const auto& records = dataset.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!io::in_split(r, split)) continue;
    if (r.group && *r.group == "unseen") continue;
    if (r.is_background()) {
      pool.background.push_back(i);
    } else {
      const std::size_t c = *dataset.class_index(r.label);
      if (head_class[c] < 0) {
        head_class[c] = static_cast<std::ptrdiff_t>(pool.classes.size());
        pool.classes.push_back(c);
        pool.class_names.push_back(r.label);
        pool.members.emplace_back();
      }
      pool.members[static_cast<std::size_t>(head_class[c])].push_back(i);
    }
    const std::string image = r.image_id.value_or(r.id);
    auto [it, inserted] = image_slot.emplace(image, pool.images.size());
    if (inserted) pool.images.emplace_back();
    pool.images[it->second].push_back(i);
  }
  return pool;
}

std::vector<std::size_t> sample_batch(const TrainingPool& pool, const BatchSpec& spec, Rng& rng) {
  spec.validate();
  if (pool.num_classes() < spec.classes_per_batch) {
    throw InvalidArgument("sample_batch: " + std::to_string(pool.num_classes()) + " classes available, M=" +
                          std::to_string(spec.classes_per_batch) + " requested");
  }
  std::vector<std::size_t> batch;
  batch.reserve(spec.classes_per_batch * spec.instances_per_class + spec.background_per_batch);
  for (std::size_t c : rng.sample_without_replacement(pool.num_classes(), spec.classes_per_batch)) {
    const auto& members = pool.members[c];
    if (members.empty()) throw InvalidArgument("sample_batch: class '" + pool.class_names[c] + "' has no instances");
    if (members.size() >= spec.instances_per_class) {
      for (std::size_t k : rng.sample_without_replacement(members.size(), spec.instances_per_class)) {
        batch.push_back(members[k]);
      }
    } else {
      for (std::size_t k = 0; k < spec.instances_per_class; ++k) batch.push_back(members[rng.index(members.size())]);
    }
  }
  if (spec.background_per_batch > 0) {
    if (pool.background.empty()) throw InvalidArgument("sample_batch: background requested but none available");
    for (std::size_t k = 0; k < spec.background_per_batch; ++k) {
      batch.push_back(pool.background[rng.index(pool.background.size())]);
    }
  }
  return batch;
}

std::vector<std::size_t> sample_image_batch(const TrainingPool& pool, Rng& rng, std::size_t min_items) {
  if (pool.images.empty()) throw InvalidArgument("sample_image_batch: no images in pool");
  std::size_t total = 0;
  for (const auto& img : pool.images) total += img.size();
  if (total < min_items) throw InvalidArgument("sample_image_batch: pool smaller than the minimum batch");
  std::vector<std::size_t> batch;
  while (batch.size() < min_items) {
    const auto& img = pool.images[rng.index(pool.images.size())];
    batch.insert(batch.end(), img.begin(), img.end());
  }
  return batch;
}

}  // namespace repmet::train
