#include "repmet/eval/detection.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <set>
#include <tuple>

#include <json.hpp>

#include "repmet/core/error.hpp"

namespace repmet::eval {

using nlohmann::json;

double iou(const Box& a, const Box& b) {
  if (!a.well_formed() || !b.well_formed()) throw InvalidArgument("iou: zero-area or inverted box");
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

namespace {

using GroupKey = std::tuple<std::int64_t, std::string, std::string>;

std::vector<std::size_t> score_order(const std::vector<DetectionRecord>& d) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (d[a].score != d[b].score) return d[a].score > d[b].score;
    return d[a].record_id < d[b].record_id;
  });
  return order;
}

}  // namespace

MatchResult match_detections(const std::vector<DetectionRecord>& detections,
                             const std::vector<GroundTruthObject>& ground_truth, double iou_threshold) {
  std::map<GroupKey, std::vector<std::size_t>> gt_by_group;
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    const auto& o = ground_truth[g];
    gt_by_group[{o.episode_id, o.image_id, o.class_id}].push_back(g);
  }

  MatchResult result;
  result.true_positive.assign(detections.size(), false);
  result.matched_gt.assign(detections.size(), -1);
  std::vector<bool> claimed(ground_truth.size(), false);

  for (std::size_t di : score_order(detections)) {
    const auto& d = detections[di];
    auto it = gt_by_group.find({d.episode_id, d.image_id, d.class_id});
    if (it == gt_by_group.end()) continue;
    std::int64_t best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g : it->second) {
      if (claimed[g]) continue;
      const double v = iou(d.box, ground_truth[g].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<std::int64_t>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      claimed[static_cast<std::size_t>(best)] = true;
      result.true_positive[di] = true;
      result.matched_gt[di] = best;
    }
  }
  return result;
}

PRCurve average_precision(std::vector<RankedHit> hits, std::size_t num_gt) {
  if (num_gt == 0) throw InvalidArgument("average_precision: no ground truth");
  std::stable_sort(hits.begin(), hits.end(), [](const RankedHit& a, const RankedHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.record_id < b.record_id;
  });
  PRCurve curve;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i].true_positive) ++tp;
    curve.thresholds.push_back(hits[i].score);
    curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    curve.recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }
  // Precision envelope from the right, then sum over recall increments.
  std::vector<double> envelope = curve.precision;
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    curve.ap += (curve.recall[i] - prev_recall) * envelope[i];
    prev_recall = curve.recall[i];
  }
  return curve;
}

MapReport map_over_episodes(const std::vector<DetectionRecord>& detections,
                            const std::vector<GroundTruthObject>& ground_truth, double iou_threshold) {
  const MatchResult m = match_detections(detections, ground_truth, iou_threshold);
  std::map<std::string, std::size_t> gt_count;
  for (const auto& g : ground_truth) ++gt_count[g.class_id];
  std::map<std::string, std::vector<RankedHit>> hits;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    hits[d.class_id].push_back({d.score, m.true_positive[i], d.record_id});
  }
  MapReport report;
  if (gt_count.empty()) return report;
  double total = 0.0;
  for (const auto& [cls, n] : gt_count) {
    const double ap = average_precision(hits[cls], n).ap;
    report.per_class_ap[cls] = ap;
    total += ap;
  }
  report.map = total / static_cast<double>(gt_count.size());
  return report;
}

double mean_per_episode_map(const std::vector<DetectionRecord>& detections,
                            const std::vector<GroundTruthObject>& ground_truth, double iou_threshold) {
  std::set<std::int64_t> episodes;
  for (const auto& g : ground_truth) episodes.insert(g.episode_id);
  if (episodes.empty()) return 0.0;
  double total = 0.0;
  for (std::int64_t e : episodes) {
    std::vector<DetectionRecord> d;
    std::vector<GroundTruthObject> g;
    for (const auto& x : detections) {
      if (x.episode_id == e) d.push_back(x);
    }
    for (const auto& x : ground_truth) {
      if (x.episode_id == e) g.push_back(x);
    }
    total += map_over_episodes(d, g, iou_threshold).map;
  }
  return total / static_cast<double>(episodes.size());
}

double recall_at_k(const std::vector<DetectionRecord>& detections, const std::vector<GroundTruthObject>& ground_truth,
                   std::size_t k, double iou_threshold) {
  if (k == 0) throw InvalidArgument("recall_at_k: k must be >= 1");
  if (ground_truth.empty()) return 0.0;
  std::map<std::pair<std::int64_t, std::string>, std::vector<std::size_t>> per_image;
  for (std::size_t i : score_order(detections)) {
    per_image[{detections[i].episode_id, detections[i].image_id}].push_back(i);
  }
  std::vector<DetectionRecord> kept;
  for (auto& [key, idx] : per_image) {
    for (std::size_t j = 0; j < std::min(k, idx.size()); ++j) kept.push_back(detections[idx[j]]);
  }
  const MatchResult m = match_detections(kept, ground_truth, iou_threshold);
  const auto matched = std::count(m.true_positive.begin(), m.true_positive.end(), true);
  return static_cast<double>(matched) / static_cast<double>(ground_truth.size());
}

std::string detection_to_json_line(const DetectionRecord& d) {
  json j = {{"schema_version", 1},
            {"record_id", d.record_id},
            {"episode_id", d.episode_id},
            {"image_id", d.image_id},
            {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
            {"class_id", d.class_id},
            {"score", d.score}};
  return j.dump();
}

std::string ground_truth_to_json_line(const GroundTruthObject& g) {
  json j = {{"schema_version", 1},
            {"episode_id", g.episode_id},
            {"image_id", g.image_id},
            {"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}},
            {"class_id", g.class_id}};
  return j.dump();
}

namespace {

template <class F>
void for_each_json_line(std::istream& in, const char* what, F f) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.value("schema_version", 1) != 1) throw ParseError(std::string(what) + ": unsupported schema_version", line_no);
      f(j, line_no);
    } catch (const json::exception& e) {
      throw ParseError(std::string(what) + ": " + e.what(), line_no);
    }
  }
}

Box box_from_json(const json& j, std::size_t line) {
  const auto b = j.get<std::vector<double>>();
  if (b.size() != 4) throw ParseError("box must have 4 elements", line);
  Box box{b[0], b[1], b[2], b[3]};
  if (!box.well_formed()) throw ParseError("malformed box", line);
  return box;
}

}  // namespace

std::vector<DetectionRecord> read_detections(std::istream& in) {
  std::vector<DetectionRecord> out;
  for_each_json_line(in, "detections", [&](const json& j, std::size_t line) {
    DetectionRecord d;
    d.record_id = j.at("record_id").get<std::uint64_t>();
    d.episode_id = j.at("episode_id").get<std::int64_t>();
    d.image_id = j.at("image_id").get<std::string>();
    d.box = box_from_json(j.at("box"), line);
    d.class_id = j.at("class_id").get<std::string>();
    d.score = j.at("score").get<double>();
    out.push_back(std::move(d));
  });
  return out;
}

std::vector<GroundTruthObject> read_ground_truth(std::istream& in) {
  std::vector<GroundTruthObject> out;
  for_each_json_line(in, "ground truth", [&](const json& j, std::size_t line) {
    GroundTruthObject g;
    g.episode_id = j.at("episode_id").get<std::int64_t>();
    g.image_id = j.at("image_id").get<std::string>();
    g.box = box_from_json(j.at("box"), line);
    g.class_id = j.at("class_id").get<std::string>();
    out.push_back(std::move(g));
  });
  return out;
}

}  // namespace repmet::eval
