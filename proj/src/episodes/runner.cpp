#include "repmet/episodes/runner.hpp"

#include <algorithm>
#include <exception>
#include <set>
#include <thread>
#include <unordered_map>

#include "repmet/core/error.hpp"

namespace repmet::episodes {

void EpisodeEvalConfig::validate() const {
  if (!(support_iou > 0.0 && support_iou <= 1.0)) throw InvalidArgument("episodes: support_iou must be in (0, 1]");
  if (!(match_iou > 0.0 && match_iou <= 1.0)) throw InvalidArgument("episodes: match IoU must be in (0, 1]");
  if (!(finetune.lr > 0.0)) throw InvalidArgument("episodes: finetune lr must be > 0");
  if (threads == 0) throw InvalidArgument("episodes: threads must be >= 1");
}

namespace {

using ImageIndex = std::unordered_map<std::string, std::vector<std::size_t>>;

std::size_t lookup(const io::Dataset& d, const std::string& id) {
  auto r = d.find(id);
  if (!r) throw InvalidArgument("episodes: unknown item id '" + id + "'");
  return *r;
}

struct Support {
  diff::Tensor features;
  std::vector<head::Label> labels;
  std::vector<diff::Tensor> per_class;
};

// Every boxed record in a support object's image is a candidate ROI, except
// the episode's own queries.
Support build_support(const head::RepMetHead& base, const io::Dataset& d, const ImageIndex& images,
                      const std::vector<std::vector<std::string>>& sets, const std::set<std::size_t>& queries,
                      double iou_threshold) {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> row_class;
  for (std::size_t c = 0; c < sets.size(); ++c) {
    for (const auto& id : sets[c]) {
      const std::size_t r = lookup(d, id);
      const auto& rec = d.records()[r];
      if (!rec.image_id || !rec.box) {
        rows.push_back(r);
        row_class.push_back(c);
        continue;
      }
      std::vector<std::size_t> cands;
      std::vector<eval::Box> boxes;
      for (std::size_t k : images.at(*rec.image_id)) {
        if (queries.contains(k)) continue;
        cands.push_back(k);
        boxes.push_back(*d.records()[k].box);
      }
      const GroundTruthBox gt{*rec.box, c};
      for (const auto& s : select_support_rois(boxes, std::span<const GroundTruthBox>(&gt, 1), iou_threshold)) {
        rows.push_back(cands[s.candidate]);
        row_class.push_back(c);
      }
    }
  }

  Support out;
  out.features = d.features(rows);
  const diff::Tensor emb = base.embed(out.features);
  for (std::size_t c = 0; c < sets.size(); ++c) {
    std::vector<std::size_t> mine;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (row_class[i] == c) mine.push_back(i);
    }
    diff::Tensor t(mine.size(), emb.cols());
    for (std::size_t i = 0; i < mine.size(); ++i) {
      std::copy(emb.row_span(mine[i]).begin(), emb.row_span(mine[i]).end(), t.row_span(i).begin());
    }
    out.per_class.push_back(std::move(t));
  }
  for (std::size_t c : row_class) out.labels.push_back(head::Label::of(c));
  return out;
}

struct RowKey {
  std::size_t shots;
  bool finetuned;
};

}  // namespace

EpisodeEvalResult run_episodes(const head::RepMetHead& base, const io::Dataset& dataset,
                               const std::vector<Episode>& episodes, const EpisodeEvalConfig& config) {
  config.validate();
  if (episodes.empty()) throw InvalidArgument("episodes: no episodes to run");

  std::set<std::size_t> shot_set;
  for (const auto& e : episodes) {
    for (const auto& [n, sets] : e.support) shot_set.insert(n);
  }
  std::vector<RowKey> keys;
  const bool tune = config.with_finetune && config.finetune.steps > 0;
  for (std::size_t n : shot_set) {
    keys.push_back({n, false});
    if (tune) keys.push_back({n, true});
  }

  ImageIndex images;
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    const auto& rec = dataset.records()[r];
    if (rec.image_id && rec.box) images[*rec.image_id].push_back(r);
  }

  // scores[episode][row]
  std::vector<std::vector<std::vector<QueryScore>>> scores(episodes.size(),
                                                           std::vector<std::vector<QueryScore>>(keys.size()));
  auto run_one = [&](std::size_t e) {
    const Episode& ep = episodes[e];
    std::vector<std::size_t> queries;
    for (const auto& id : ep.queries) queries.push_back(lookup(dataset, id));
    const std::set<std::size_t> query_set(queries.begin(), queries.end());
    for (std::size_t k = 0; k < keys.size(); ++k) {
      auto it = ep.support.find(keys[k].shots);
      if (it == ep.support.end()) continue;
      if (it->second.size() != ep.class_ids.size()) {
        throw InvalidArgument("episode " + std::to_string(ep.id) + ": support does not cover every class");
      }
      const Support s = build_support(base, dataset, images, it->second, query_set, config.support_iou);
      head::RepMetHead model = replace_representatives(base, s.per_class);
      if (keys[k].finetuned) episode_finetune(model, s.features, s.labels, config.finetune);
      scores[e][k] = score_queries(model, ep.id, dataset, queries, ep.class_ids);
    }
  };

  const std::size_t workers = std::min(config.threads, episodes.size());
  if (workers <= 1) {
    for (std::size_t e = 0; e < episodes.size(); ++e) run_one(e);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t e = t; e < episodes.size(); e += workers) run_one(e);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  EpisodeEvalResult result;
  for (const auto& ep : episodes) {
    for (const auto& id : ep.queries) {
      const auto& rec = dataset.records()[lookup(dataset, id)];
      if (rec.is_background()) continue;
      result.ground_truth.push_back({ep.id, record_image(rec), record_box(rec), rec.label});
    }
  }

  for (std::size_t k = 0; k < keys.size(); ++k) {
    if (keys[k].finetuned) continue;
    ShotReport row;
    row.shots = keys[k].shots;
    std::set<std::int64_t> covered;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      if (!episodes[e].support.contains(row.shots)) continue;
      covered.insert(episodes[e].id);
      for (const auto& q : scores[e][k]) {
        if (dataset.records()[q.record].is_background()) {
          ++row.background_queries;
        } else {
          ++row.foreground_queries;
        }
      }
    }
    row.episodes = covered.size();
    std::vector<eval::GroundTruthObject> gt;
    for (const auto& g : result.ground_truth) {
      if (covered.contains(g.episode_id)) gt.push_back(g);
    }
    auto summarize = [&](std::size_t key) {
      VariantReport v;
      std::size_t correct = 0, accepted = 0;
      for (std::size_t e = 0; e < episodes.size(); ++e) {
        for (const auto& q : scores[e][key]) {
          const auto& rec = dataset.records()[q.record];
          if (rec.is_background()) {
            if (!q.background) ++accepted;
          } else if (!q.background && q.detection.class_id == rec.label) {
            ++correct;
          }
          eval::DetectionRecord det = q.detection;
          det.record_id = v.detections.size();
          v.detections.push_back(std::move(det));
        }
      }
      if (row.foreground_queries > 0) v.accuracy = static_cast<double>(correct) / row.foreground_queries;
      if (row.background_queries > 0) v.background_false_accept = static_cast<double>(accepted) / row.background_queries;
      if (!gt.empty()) {
        v.map = eval::map_over_episodes(v.detections, gt, config.match_iou).map;
        for (std::size_t kk : config.recall_k) v.recall_at_k[kk] = eval::recall_at_k(v.detections, gt, kk, config.match_iou);
      }
      return v;
    };
    row.plain = summarize(k);
    if (k + 1 < keys.size() && keys[k + 1].finetuned) row.finetuned = summarize(k + 1);
    result.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace repmet::episodes
