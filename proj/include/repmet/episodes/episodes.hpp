#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "repmet/diff/tensor.hpp"
#include "repmet/eval/box.hpp"
#include "repmet/eval/detection.hpp"
#include "repmet/head/head.hpp"
#include "repmet/io/dataset.hpp"

namespace repmet::episodes {

inline constexpr int kEpisodeSchemaVersion = 1;

enum class ClassPool {
  unseen,  // classes tagged group=unseen, every split
  seen,    // classes not tagged unseen, non-train records only
};

std::string to_string(ClassPool pool);
ClassPool class_pool_from_string(const std::string& s);

struct EpisodeSpec {
  std::vector<std::size_t> shots{1, 5, 10};
  std::size_t ways = 5;
  std::size_t queries_per_class = 10;
  /// Background distractors per episode as a fraction of its foreground queries.
  double background_fraction = 0.2;
  std::size_t episode_count = 500;
  std::uint64_t seed = 0;
  ClassPool pool = ClassPool::unseen;

  void validate() const;
  std::size_t max_shots() const;
};

/// One m-way few-shot task shared by every shot count: the class choice and
/// queries are common, the support set is drawn separately per shot count.
struct Episode {
  std::int64_t id = 0;
  std::vector<std::string> class_ids;
  /// shots → per-class support record ids (same class order as class_ids)
  std::map<std::size_t, std::vector<std::vector<std::string>>> support;
  std::vector<std::string> queries;

  bool operator==(const Episode&) const = default;
};

/// Deterministic in (dataset, spec). Classes with fewer than
/// queries_per_class + max(shots) records are skipped with a warning; a pool
/// left with fewer than `ways` classes, or too little background, is an error.
std::vector<Episode> generate_episodes(const io::Dataset& dataset, const EpisodeSpec& spec,
                                       std::vector<std::string>* warnings = nullptr);

std::string episode_to_json_line(const Episode& e);
Episode episode_from_json_line(const std::string& line, std::size_t line_no = 0);
void write_episodes(std::ostream& out, const std::vector<Episode>& episodes);
std::vector<Episode> read_episodes(std::istream& in);

struct GroundTruthBox {
  eval::Box box;
  std::size_t class_index = 0;
};

struct SelectedRoi {
  std::size_t candidate = 0;
  std::size_t ground_truth = 0;  // index of the object it was assigned to
  double iou = 0.0;
};

/// Candidates whose best-IoU ground-truth object overlaps by ≥ threshold are
/// kept and assigned to that object. An object left without any candidate
/// gets its single highest-IoU candidate. Output is in candidate order.
std::vector<SelectedRoi> select_support_rois(std::span<const eval::Box> candidates,
                                             std::span<const GroundTruthBox> ground_truth,
                                             double iou_threshold = 0.7);

/// Representatives built from support embeddings: class c gets one mode per
/// row of per_class[c].
head::Representatives representatives_from_support(const std::vector<diff::Tensor>& per_class);

/// Copy of `base` whose representatives are the support embeddings and whose
/// posterior is the max-over-modes form. `base` is left untouched.
head::RepMetHead replace_representatives(const head::RepMetHead& base, const std::vector<diff::Tensor>& per_class);

struct FinetuneConfig {
  std::size_t steps = 50;
  double lr = 0.01;
  double momentum = 0.9;
};

struct FinetuneResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Fine-tunes only the last embedding layer and the representatives on the
/// support set, batch norm frozen in eval mode. Keeps the lowest-loss
/// parameters seen, so final_loss ≤ initial_loss.
FinetuneResult episode_finetune(head::RepMetHead& model, const diff::Tensor& support,
                                std::span<const head::Label> labels, const FinetuneConfig& config);

struct QueryScore {
  eval::DetectionRecord detection;  // class_id/score of the best class
  double background_posterior = 0.0;
  bool background = false;  // background posterior exceeds every class posterior
  std::size_t record = 0;
};

/// Max-mode scoring of query records. class_id is class_ids[argmax].
std::vector<QueryScore> score_queries(const head::RepMetHead& model, std::int64_t episode_id,
                                      const io::Dataset& dataset, std::span<const std::size_t> queries,
                                      const std::vector<std::string>& class_ids);

/// Box and image of a record as used by detection evaluation. Records without
/// a box stand alone: unit box, image = record id.
eval::Box record_box(const io::FeatureRecord& r);
std::string record_image(const io::FeatureRecord& r);

}  // namespace repmet::episodes
