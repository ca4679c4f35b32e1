#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "repmet/eval/box.hpp"

namespace repmet::eval {

/// A scored, class-labeled box. `record_id` orders equal scores.
struct DetectionRecord {
  std::uint64_t record_id = 0;
  std::int64_t episode_id = 0;
  std::string image_id;
  Box box;
  std::string class_id;
  double score = 0.0;

  bool operator==(const DetectionRecord&) const = default;
};

struct GroundTruthObject {
  std::int64_t episode_id = 0;
  std::string image_id;
  Box box;
  std::string class_id;

  bool operator==(const GroundTruthObject&) const = default;
};

/// TP/FP labeling aligned with the input detections.
struct MatchResult {
  std::vector<bool> true_positive;
  /// Index of the ground-truth object each detection claimed, or -1.
  std::vector<std::int64_t> matched_gt;
};

/// Greedy matching within each (episode, image, class): detections are taken
/// by descending score (ties: ascending record_id); each claims the unclaimed
/// ground-truth object of highest IoU ≥ threshold (ties: lowest gt index),
/// otherwise it is a false positive.
MatchResult match_detections(const std::vector<DetectionRecord>& detections,
                             const std::vector<GroundTruthObject>& ground_truth, double iou_threshold = 0.5);

/// One ranked detection for AP computation.
struct RankedHit {
  double score = 0.0;
  bool true_positive = false;
  std::uint64_t record_id = 0;
};

struct PRCurve {
  std::vector<double> thresholds;  // descending scores
  std::vector<double> precision;
  std::vector<double> recall;
  double ap = 0.0;
};

/// All-points interpolated AP: Σ Δrecall · max precision at recall ≥ r.
PRCurve average_precision(std::vector<RankedHit> hits, std::size_t num_gt);

struct MapReport {
  double map = 0.0;
  std::map<std::string, double> per_class_ap;  // classes with at least one gt
};

/// Per-class AP over detections pooled from every episode (one global score
/// threshold sweep), averaged over classes that have ground truth.
MapReport map_over_episodes(const std::vector<DetectionRecord>& detections,
                            const std::vector<GroundTruthObject>& ground_truth, double iou_threshold = 0.5);

/// The mean of per-episode mAPs. Differs from the pooled definition in
/// general; kept for comparison only.
double mean_per_episode_map(const std::vector<DetectionRecord>& detections,
                            const std::vector<GroundTruthObject>& ground_truth, double iou_threshold = 0.5);

/// Fraction of ground-truth objects matched when each (episode, image) keeps
/// only its k highest-scoring detections, all classes pooled.
double recall_at_k(const std::vector<DetectionRecord>& detections, const std::vector<GroundTruthObject>& ground_truth,
                   std::size_t k, double iou_threshold = 0.5);

// JSON Lines wire forms (one object per line, each with schema_version).
std::string detection_to_json_line(const DetectionRecord& d);
std::string ground_truth_to_json_line(const GroundTruthObject& g);
std::vector<DetectionRecord> read_detections(std::istream& in);
std::vector<GroundTruthObject> read_ground_truth(std::istream& in);

}  // namespace repmet::eval
