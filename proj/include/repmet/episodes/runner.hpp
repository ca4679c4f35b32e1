#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "repmet/episodes/episodes.hpp"
#include "repmet/eval/detection.hpp"
#include "repmet/head/head.hpp"
#include "repmet/io/dataset.hpp"

namespace repmet::episodes {

struct EpisodeEvalConfig {
  double support_iou = 0.7;
  double match_iou = 0.5;
  FinetuneConfig finetune{};
  /// Also run the fine-tuned variant (finetune.steps > 0).
  bool with_finetune = true;
  std::vector<std::size_t> recall_k{10, 100};
  std::size_t threads = 1;

  void validate() const;
};

struct VariantReport {
  double map = 0.0;
  std::map<std::size_t, double> recall_at_k;
  /// Foreground queries assigned their own class and not rejected as background.
  double accuracy = 0.0;
  /// Background queries not rejected.
  double background_false_accept = 0.0;
  std::vector<eval::DetectionRecord> detections;
};

/// One row per shot count; `finetuned` is set when fine-tuning ran.
struct ShotReport {
  std::size_t shots = 0;
  std::size_t episodes = 0;
  std::size_t foreground_queries = 0;
  std::size_t background_queries = 0;
  VariantReport plain;
  std::optional<VariantReport> finetuned;
};

struct EpisodeEvalResult {
  std::vector<ShotReport> rows;  // shot ascending
  std::vector<eval::GroundTruthObject> ground_truth;
};

/// Runs every episode at every shot count it lists: support ROIs are chosen
/// by IoU against the support object, embedded with `base`, installed as the
/// representatives of an episode copy, optionally fine-tuned, and queries are
/// scored. Output is independent of the thread count.
EpisodeEvalResult run_episodes(const head::RepMetHead& base, const io::Dataset& dataset,
                               const std::vector<Episode>& episodes, const EpisodeEvalConfig& config);

}  // namespace repmet::episodes
