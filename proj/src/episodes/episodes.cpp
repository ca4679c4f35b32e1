#include "repmet/episodes/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include <json.hpp>

#include "repmet/core/error.hpp"
#include "repmet/core/rng.hpp"
#include "repmet/train/optimizer.hpp"
#include "repmet/train/trainer.hpp"

namespace repmet::episodes {

using nlohmann::json;
using diff::Tensor;

std::string to_string(ClassPool pool) { return pool == ClassPool::unseen ? "unseen" : "seen"; }

ClassPool class_pool_from_string(const std::string& s) {
  if (s == "unseen") return ClassPool::unseen;
  if (s == "seen") return ClassPool::seen;
  throw InvalidArgument("unknown class pool '" + s + "' (expected seen|unseen)");
}

void EpisodeSpec::validate() const {
  if (shots.empty()) throw InvalidArgument("episodes: at least one shot count required");
  for (std::size_t n : shots) {
    if (n == 0) throw InvalidArgument("episodes: shot counts must be >= 1");
  }
  if (ways == 0) throw InvalidArgument("episodes: ways must be >= 1");
  if (queries_per_class == 0) throw InvalidArgument("episodes: queries_per_class must be >= 1");
  if (!(background_fraction >= 0.0)) throw InvalidArgument("episodes: background_fraction must be >= 0");
  if (episode_count == 0) throw InvalidArgument("episodes: episode_count must be >= 1");
}

std::size_t EpisodeSpec::max_shots() const { return *std::max_element(shots.begin(), shots.end()); }

namespace {

bool in_pool(const io::FeatureRecord& r, ClassPool pool) {
  const bool unseen = r.group && *r.group == "unseen";
  if (pool == ClassPool::unseen) return unseen;
  return !unseen && !io::in_split(r, "train");
}

}  // namespace

std::vector<Episode> generate_episodes(const io::Dataset& dataset, const EpisodeSpec& spec,
                                       std::vector<std::string>* warnings) {
  spec.validate();
  const std::size_t need = spec.queries_per_class + spec.max_shots();

  std::vector<std::size_t> eligible;  // dataset class indices
  std::vector<std::vector<std::size_t>> items(dataset.num_classes());
  for (std::size_t c = 0; c < dataset.num_classes(); ++c) {
    for (std::size_t r : dataset.members(c)) {
      if (in_pool(dataset.records()[r], spec.pool)) items[c].push_back(r);
    }
    if (items[c].empty()) continue;
    if (items[c].size() < need) {
      if (warnings) {
        warnings->push_back("class '" + dataset.class_names()[c] + "' skipped: " + std::to_string(items[c].size()) +
                            " items, episodes need " + std::to_string(need));
      }
      continue;
    }
    eligible.push_back(c);
  }
  if (eligible.size() < spec.ways) {
    throw InvalidArgument("episodes: " + std::to_string(eligible.size()) + " eligible " + to_string(spec.pool) +
                          " classes, " + std::to_string(spec.ways) + "-way episodes requested");
  }

  std::vector<std::size_t> background;
  for (std::size_t r : dataset.background()) {
    if (!io::in_split(dataset.records()[r], "train")) background.push_back(r);
  }
  const auto bg_count = static_cast<std::size_t>(
      std::llround(spec.background_fraction * static_cast<double>(spec.ways * spec.queries_per_class)));
  if (bg_count > background.size()) {
    throw InvalidArgument("episodes: " + std::to_string(bg_count) + " background queries per episode, " +
                          std::to_string(background.size()) + " non-train background records available");
  }

  const Rng root = Rng(spec.seed).split("episodes");
  const auto& records = dataset.records();
  std::vector<Episode> out;
  out.reserve(spec.episode_count);
  for (std::size_t e = 0; e < spec.episode_count; ++e) {
    Rng rng = root.split("episode", e);
    Episode ep;
    ep.id = static_cast<std::int64_t>(e);
    std::vector<std::vector<std::size_t>> remaining;
    for (std::size_t pick : rng.sample_without_replacement(eligible.size(), spec.ways)) {
      const std::size_t c = eligible[pick];
      ep.class_ids.push_back(dataset.class_names()[c]);
      const auto& pool = items[c];
      const auto order = rng.sample_without_replacement(pool.size(), pool.size());
      for (std::size_t q = 0; q < spec.queries_per_class; ++q) ep.queries.push_back(records[pool[order[q]]].id);
      std::vector<std::size_t> rest;
      for (std::size_t k = spec.queries_per_class; k < order.size(); ++k) rest.push_back(pool[order[k]]);
      std::sort(rest.begin(), rest.end());
      remaining.push_back(std::move(rest));
    }
    for (std::size_t k : rng.sample_without_replacement(background.size(), bg_count)) {
      ep.queries.push_back(records[background[k]].id);
    }
    for (std::size_t n : spec.shots) {
      Rng shot_rng = root.split("support", e * 1000003ULL + n);
      auto& sets = ep.support[n];
      for (const auto& rest : remaining) {
        std::vector<std::string> ids;
        for (std::size_t k : shot_rng.sample_without_replacement(rest.size(), n)) ids.push_back(records[rest[k]].id);
        sets.push_back(std::move(ids));
      }
    }
    out.push_back(std::move(ep));
  }
  return out;
}

std::string episode_to_json_line(const Episode& e) {
  json support = json::object();
  for (const auto& [n, sets] : e.support) support[std::to_string(n)] = sets;
  json j = {{"schema_version", kEpisodeSchemaVersion},
            {"episode_id", e.id},
            {"class_ids", e.class_ids},
            {"support_item_ids", support},
            {"query_item_ids", e.queries}};
  return j.dump();
}

Episode episode_from_json_line(const std::string& line, std::size_t line_no) {
  try {
    const json j = json::parse(line);
    if (j.value("schema_version", kEpisodeSchemaVersion) != kEpisodeSchemaVersion) {
      throw ParseError("episodes: unsupported schema_version", line_no);
    }
    Episode e;
    e.id = j.at("episode_id").get<std::int64_t>();
    e.class_ids = j.at("class_ids").get<std::vector<std::string>>();
    for (const auto& [key, sets] : j.at("support_item_ids").items()) {
      const std::size_t n = std::stoul(key);
      e.support[n] = sets.get<std::vector<std::vector<std::string>>>();
      if (e.support[n].size() != e.class_ids.size()) {
        throw ParseError("episodes: support for " + key + "-shot does not list every class", line_no);
      }
    }
    e.queries = j.at("query_item_ids").get<std::vector<std::string>>();
    return e;
  } catch (const json::exception& ex) {
    throw ParseError(std::string("episodes: ") + ex.what(), line_no);
  } catch (const std::invalid_argument&) {
    throw ParseError("episodes: support_item_ids keys must be shot counts", line_no);
  }
}

void write_episodes(std::ostream& out, const std::vector<Episode>& episodes) {
  for (const auto& e : episodes) out << episode_to_json_line(e) << '\n';
}

std::vector<Episode> read_episodes(std::istream& in) {
  std::vector<Episode> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(episode_from_json_line(line, line_no));
  }
  return out;
}

std::vector<SelectedRoi> select_support_rois(std::span<const eval::Box> candidates,
                                             std::span<const GroundTruthBox> ground_truth, double iou_threshold) {
  if (candidates.empty()) throw InvalidArgument("select_support_rois: no candidate ROIs");
  if (ground_truth.empty()) throw InvalidArgument("select_support_rois: no ground-truth boxes");

  std::vector<SelectedRoi> chosen;
  std::vector<bool> covered(ground_truth.size(), false);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::size_t best = 0;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      const double v = eval::iou(candidates[c], ground_truth[g].box);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best_iou >= iou_threshold) {
      chosen.push_back({c, best, best_iou});
      covered[best] = true;
    }
  }
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    if (covered[g]) continue;
    std::size_t best = 0;
    double best_iou = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double v = eval::iou(candidates[c], ground_truth[g].box);
      if (v > best_iou) {
        best_iou = v;
        best = c;
      }
    }
    chosen.push_back({best, g, best_iou});
  }
  std::stable_sort(chosen.begin(), chosen.end(),
                   [](const SelectedRoi& a, const SelectedRoi& b) { return a.candidate < b.candidate; });
  return chosen;
}

head::Representatives representatives_from_support(const std::vector<Tensor>& per_class) {
  if (per_class.empty()) throw InvalidArgument("replace_representatives: no classes");
  std::vector<std::size_t> counts;
  const std::size_t dim = per_class.front().cols();
  std::size_t total = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c].rows() == 0) {
      throw InvalidArgument("replace_representatives: class " + std::to_string(c) + " has no support embeddings");
    }
    if (per_class[c].cols() != dim) throw ShapeError("replace_representatives: inconsistent embedding dims");
    counts.push_back(per_class[c].rows());
    total += per_class[c].rows();
  }
  Tensor values(total, dim);
  std::size_t row = 0;
  for (const auto& t : per_class) {
    for (std::size_t r = 0; r < t.rows(); ++r, ++row) {
      std::copy(t.row_span(r).begin(), t.row_span(r).end(), values.row_span(row).begin());
    }
  }
  return head::Representatives::from_values(head::ModeLayout::from_counts(counts), values);
}

head::RepMetHead replace_representatives(const head::RepMetHead& base, const std::vector<Tensor>& per_class) {
  if (base.embedding().config().final_l2_normalize) {
    for (const auto& t : per_class) {
      for (std::size_t r = 0; r < t.rows(); ++r) {
        double n2 = 0.0;
        for (double v : t.row_span(r)) n2 += v * v;
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
          throw InvalidArgument("replace_representatives: support embeddings must be unit-norm");
        }
      }
    }
  }
  head::RepMetHead model = base;
  model.install_representatives(representatives_from_support(per_class));
  model.mixture().posterior = head::PosteriorMode::max;
  model.set_mode(diff::BnMode::eval);
  return model;
}

FinetuneResult episode_finetune(head::RepMetHead& model, const Tensor& support, std::span<const head::Label> labels,
                                const FinetuneConfig& config) {
  if (support.rows() == 0) throw InvalidArgument("episode_finetune: empty support set");
  model.set_mode(diff::BnMode::eval);
  const head::LossOptions options{model.num_classes() >= 2};

  auto support_loss = [&]() {
    diff::Graph g(false);
    const head::HeadGraph h = model.forward(g, support);
    return model.loss(h, labels, options).total.value().item();
  };

  FinetuneResult result;
  result.initial_loss = support_loss();
  result.final_loss = result.initial_loss;
  if (config.steps == 0) return result;

  std::vector<diff::Parameter*> all = model.parameters();
  std::vector<bool> saved_flags;
  for (auto* p : all) saved_flags.push_back(p->trainable);
  for (auto* p : all) p->trainable = false;
  std::vector<diff::Parameter*> tunable = model.embedding().last_layer_parameters();
  tunable.push_back(&model.representatives().weights());
  for (auto* p : tunable) p->trainable = true;

  train::Sgd sgd(tunable, config.lr, config.momentum, 0.0);
  std::vector<Tensor> best;
  for (auto* p : tunable) best.push_back(p->value);
  double best_loss = result.initial_loss;

  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto* p : tunable) p->zero_grad();
    diff::Graph g;
    const head::HeadGraph h = model.forward(g, support);
    const head::LossTerms loss = model.loss(h, labels, options);
    const double value = loss.total.value().item();
    if (!std::isfinite(value)) throw DivergenceError("episode_finetune: non-finite loss at step " + std::to_string(step));
    if (value < best_loss) {
      best_loss = value;
      for (std::size_t i = 0; i < tunable.size(); ++i) best[i] = tunable[i]->value;
    }
    g.backward(loss.total);
    sgd.step();
  }
  const double last = support_loss();
  if (last < best_loss) {
    best_loss = last;
  } else {
    for (std::size_t i = 0; i < tunable.size(); ++i) tunable[i]->value = best[i];
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    all[i]->trainable = saved_flags[i];
    all[i]->zero_grad();
  }
  result.final_loss = best_loss;
  return result;
}

eval::Box record_box(const io::FeatureRecord& r) { return r.box.value_or(eval::Box{0.0, 0.0, 1.0, 1.0}); }

std::string record_image(const io::FeatureRecord& r) { return r.image_id.value_or(r.id); }

std::vector<QueryScore> score_queries(const head::RepMetHead& model, std::int64_t episode_id,
                                      const io::Dataset& dataset, std::span<const std::size_t> queries,
                                      const std::vector<std::string>& class_ids) {
  if (class_ids.size() != model.num_classes()) {
    throw InvalidArgument("score_queries: " + std::to_string(class_ids.size()) + " class ids for a " +
                          std::to_string(model.num_classes()) + "-class model");
  }
  std::vector<QueryScore> out;
  if (queries.empty()) return out;
  const auto outputs = model.infer(dataset.features({queries.begin(), queries.end()}), head::PosteriorMode::max);
  out.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& o = outputs[q];
    const auto& rec = dataset.records()[queries[q]];
    QueryScore s;
    s.record = queries[q];
    s.detection.episode_id = episode_id;
    s.detection.image_id = record_image(rec);
    s.detection.box = record_box(rec);
    s.detection.class_id = class_ids[o.predicted_class];
    s.detection.score = o.class_posterior[o.predicted_class];
    s.background_posterior = o.background_posterior;
    s.background = o.background_posterior > o.class_posterior[o.predicted_class];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace repmet::episodes
