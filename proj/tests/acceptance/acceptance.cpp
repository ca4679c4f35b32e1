// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "oracles.hpp"
#include "repmet/diff/batch_norm.hpp"
#include "repmet/diff/grad_check.hpp"
#include "repmet/episodes/episodes.hpp"
#include "repmet/episodes/runner.hpp"
#include "repmet/eval/detection.hpp"
#include "repmet/eval/metrics.hpp"
#include "repmet/head/head.hpp"
#include "repmet/io/synth.hpp"
#include "repmet/train/trainer.hpp"
#include "support.hpp"

using namespace repmet;
using diff::Graph;
using diff::Tensor;
using diff::Var;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double time_limit_s;
  std::function<Outcome()> body;
};

std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// Gradient checks ----------------------------------------------------------

double primitive_error(Rng& rng) {
  using namespace diff;
  using testing::op_gradient_error;
  using testing::random_tensor;
  using testing::spaced_tensor;
  using V = const std::vector<Var>&;
  double worst = 0.0;
  auto track = [&](double e) { worst = std::max(worst, e); };
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t r = 2 + rng.index(3), c = 2 + rng.index(4), k = 1 + rng.index(4);
    const Tensor a = random_tensor(rng, r, c), b = random_tensor(rng, r, c, 0.5, 2.0);
    const Tensor pos = random_tensor(rng, r, c, 0.2, 3.0), s = spaced_tensor(rng, r, c);
    const Tensor w = random_tensor(rng, c, k), bias = random_tensor(rng, 1, k), y = random_tensor(rng, k, c);
    track(op_gradient_error([](Graph&, V v) { return add(v[0], v[1]); }, {a, b}, rng));
    track(op_gradient_error([](Graph&, V v) { return sub(v[0], v[1]); }, {a, b}, rng));
    track(op_gradient_error([](Graph&, V v) { return mul(v[0], v[1]); }, {a, b}, rng));
    track(op_gradient_error([](Graph&, V v) { return div(v[0], v[1]); }, {a, b}, rng));
    track(op_gradient_error([](Graph&, V v) { return exp(v[0]); }, {a}, rng));
    track(op_gradient_error([](Graph&, V v) { return log(v[0]); }, {pos}, rng));
    track(op_gradient_error([](Graph&, V v) { return sqrt(v[0]); }, {pos}, rng));
    track(op_gradient_error([](Graph&, V v) { return square(v[0]); }, {a}, rng));
    track(op_gradient_error([](Graph&, V v) { return scale(v[0], -1.5); }, {a}, rng));
    track(op_gradient_error([](Graph&, V v) { return add_scalar(v[0], 2.0); }, {a}, rng));
    track(op_gradient_error([](Graph&, V v) { return negate(v[0]); }, {a}, rng));
    track(op_gradient_error([](Graph&, V v) { return relu(v[0]); }, {s}, rng));
    track(op_gradient_error([](Graph&, V v) { return clamp_min(v[0], 0.01); }, {s}, rng));
    track(op_gradient_error([](Graph&, V v) { return matmul(v[0], v[1]); }, {a, w}, rng));
    track(op_gradient_error([](Graph&, V v) { return linear(v[0], v[1], v[2]); }, {a, w, bias}, rng));
    track(op_gradient_error([](Graph&, V v) { return pairwise_sq_dist(v[0], v[1]); }, {a, y}, rng));
    track(op_gradient_error([](Graph&, V v) { return l2_normalize(v[0]); }, {a}, rng));
    track(op_gradient_error([](Graph&, V v) { return sum(v[0]); }, {a}, rng));
    track(op_gradient_error([](Graph&, V v) { return mean(v[0]); }, {a}, rng));
    track(op_gradient_error([&](Graph&, V v) { return reshape(v[0], c, r); }, {a}, rng));
    const Segments seg = uniform_segments(2, 2);
    const Tensor s4 = spaced_tensor(rng, r, 4);
    track(op_gradient_error([&](Graph&, V v) { return reduce_max(v[0], seg).values; }, {s4}, rng));
    track(op_gradient_error([&](Graph&, V v) { return reduce_min(v[0], seg).values; }, {s4}, rng));
    track(op_gradient_error([&](Graph&, V v) { return logsumexp(v[0], seg); }, {s4}, rng));
    track(op_gradient_error([&](Graph&, V v) { return sum_segments(v[0], seg); }, {s4}, rng));
    BatchNorm bn("bn", c);
    bn.gamma.value = random_tensor(rng, 1, c, 0.5, 1.5);
    bn.beta.value = random_tensor(rng, 1, c);
    const Tensor xb = random_tensor(rng, r + 2, c, -2.0, 2.0);
    track(op_gradient_error([&](Graph&, V v) { return bn.forward(v[0]); }, {xb}, rng));
  }
  return worst;
}

Outcome gradient_check() {
  Rng rng(101);
  const double prim = primitive_error(rng);
  double total = 0.0;
  std::size_t checked = 0, nonsmooth = 0;
  for (head::PosteriorMode mode : {head::PosteriorMode::normalized, head::PosteriorMode::max}) {
    head::HeadConfig c;
    c.embedding.input_dim = 16;
    c.embedding.layer_widths = {16, 8};
    c.mixture.num_classes = 4;
    c.mixture.modes_per_class = 2;
    c.mixture.posterior = mode;
    Rng init = rng.split("init");
    head::RepMetHead model(c, init);
    for (double& v : model.representatives().weights().value.data()) v = rng.normal(0.0, 0.5);
    const Tensor x = testing::normal_tensor(rng, 8, 16);
    std::vector<head::Label> labels;
    for (std::size_t i = 0; i < 8; ++i) labels.push_back(head::Label::of(i % 4));
    model.set_mode(diff::BnMode::train);
    const auto params = model.parameters();
    const auto report = diff::finite_difference_check(
        [&](Graph& g) { return model.loss(model.forward(g, x), labels).total; }, params);
    total = std::max(total, report.max_relative_error);
    checked += report.checked;
    nonsmooth += report.nonsmooth;
  }
  Outcome o;
  o.pass = total < 1e-4 && prim < 1e-6 && checked > 0;
  o.detail = "total loss max rel err " + num(total, 3) + " over " + std::to_string(checked) + " coords (" +
             std::to_string(nonsmooth) + " at kinks skipped), primitives " + num(prim, 3);
  return o;
}

// Synthetic classification -------------------------------------------------

struct Classification {
  io::SynthConfig synth;
  io::SynthData data;
  head::RepMetHead model;
  train::TrainingPool pool;
  double train_error = 0.0, test_error = 0.0, bayes_error = 0.0;
  std::size_t iterations = 0;
};

// Nearest-center labeling of fresh draws from each foreground cluster.
double nearest_center_error(const io::SynthData& data, double spread, std::size_t per_cluster, Rng rng) {
  std::size_t wrong = 0, total = 0;
  for (const auto& cl : data.clusters) {
    if (cl.label == io::kBackgroundLabel || cl.unseen) continue;
    for (std::size_t s = 0; s < per_cluster; ++s) {
      std::vector<double> x = cl.center;
      for (double& v : x) v += rng.normal(0.0, spread);
      double best = 1e300;
      std::string label;
      for (const auto& other : data.clusters) {
        if (other.label == io::kBackgroundLabel || other.unseen) continue;
        double d = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) d += (x[k] - other.center[k]) * (x[k] - other.center[k]);
        if (d < best) {
          best = d;
          label = other.label;
        }
      }
      wrong += label != cl.label;
      ++total;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(total);
}

Classification& classification() {
  static Classification run = [] {
    Classification r;
    r.synth.classes = 5;
    r.synth.modes_per_class = 3;
    r.synth.dim = 20;
    r.synth.samples_per_mode = 40;
    r.synth.spread = 0.05;
    r.synth.test_fraction = 0.25;
    r.data = io::synth_dataset(r.synth, 1);
    r.bayes_error = nearest_center_error(r.data, r.synth.spread, 20000, Rng(77));

    head::HeadConfig hc;
    hc.embedding.input_dim = 20;
    hc.embedding.layer_widths = {64, 32};
    hc.mixture.num_classes = 5;
    hc.mixture.modes_per_class = 3;
    hc.mixture.sigma = 0.5;
    hc.mixture.posterior = head::PosteriorMode::normalized;
    Rng init = Rng(1).split("init");
    r.model = head::RepMetHead(hc, init);
    r.pool = train::make_training_pool(r.data.dataset, "train");

    train::TrainConfig tc;
    tc.optimizer.lr = 0.05;
    tc.batch.classes_per_batch = 5;
    tc.batch.instances_per_class = 8;
    tc.iterations = 1500;
    tc.seed = 1;
    tc.project_representatives = true;
    r.iterations = train::fit(r.model, r.data.dataset, r.pool, tc).trace.size();

    auto error_on = [&](const std::string& split) {
      std::vector<std::size_t> rows;
      std::vector<head::Label> labels;
      for (std::size_t i = 0; i < r.data.dataset.size(); ++i) {
        const auto& rec = r.data.dataset.records()[i];
        if (rec.is_background() || !io::in_split(rec, split)) continue;
        rows.push_back(i);
        labels.push_back(head::Label::of(r.data.dataset.class_index(rec.label).value()));
      }
      return eval::classification_error(r.model, r.data.dataset.features(rows), labels,
                                         head::PosteriorMode::normalized);
    };
    r.train_error = error_on("train");
    r.test_error = error_on("test");
    return r;
  }();
  return run;
}

Outcome synthetic_classification() {
  const auto& r = classification();
  Outcome o;
  o.pass = r.iterations <= 5000 && r.train_error <= 2.0 && r.test_error <= 5.0 && r.bayes_error < 0.001;
  o.detail = "train err " + num(r.train_error) + "%, test err " + num(r.test_error) + "%, nearest-center error " +
             num(100.0 * r.bayes_error) + "%, " + std::to_string(r.iterations) + " iterations";
  return o;
}

Outcome representatives_near_modes() {
  auto& r = classification();
  const auto& ds = r.data.dataset;
  std::map<std::size_t, std::vector<std::size_t>> by_cluster;
  for (std::size_t i = 0; i < ds.size(); ++i) by_cluster[r.data.record_cluster[i]].push_back(i);

  std::vector<std::size_t> cluster_ids;
  std::vector<std::vector<double>> means;
  for (const auto& [cl, rows] : by_cluster) {
    const Tensor e = r.model.embed(ds.features(rows));
    std::vector<double> m(e.cols(), 0.0);
    for (std::size_t i = 0; i < e.rows(); ++i) {
      for (std::size_t k = 0; k < e.cols(); ++k) m[k] += e(i, k) / static_cast<double>(e.rows());
    }
    cluster_ids.push_back(cl);
    means.push_back(m);
  }
  auto dist = [](const std::vector<double>& a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
  };
  std::vector<double> pairwise;
  for (std::size_t i = 0; i < means.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) pairwise.push_back(dist(means[i], means[j]));
  }
  std::nth_element(pairwise.begin(), pairwise.begin() + pairwise.size() / 2, pairwise.end());
  double median = pairwise[pairwise.size() / 2];
  if (pairwise.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(pairwise.begin(), pairwise.begin() + pairwise.size() / 2));
  }

  const Tensor reps = r.model.representatives().values();
  const auto& layout = r.model.representatives().layout();
  double worst_ratio = 0.0;
  for (std::size_t c = 0; c < cluster_ids.size(); ++c) {
    const std::string& label = r.data.clusters[cluster_ids[c]].label;
    std::size_t head_class = 0;
    while (r.pool.class_names[head_class] != label) ++head_class;
    double best = 1e300;
    for (std::size_t m = layout.begin(head_class); m < layout.end(head_class); ++m) {
      best = std::min(best, dist(means[c], reps.row_span(m)));
    }
    worst_ratio = std::max(worst_ratio, best / median);
  }
  Outcome o;
  o.pass = worst_ratio <= 0.25;
  o.detail = std::to_string(cluster_ids.size()) + " clusters, worst nearest-representative distance " +
             num(worst_ratio, 3) + " x median inter-cluster distance " + num(median, 3);
  return o;
}

// Few-shot episodes ---------------------------------------------------------

Outcome few_shot_episodes() {
  io::SynthConfig s;
  s.classes = 40;
  s.modes_per_class = 2;
  s.dim = 20;
  s.samples_per_mode = 20;
  s.test_fraction = 0.25;
  s.unseen_classes = 10;
  s.unseen_modes_per_class = 1;
  s.unseen_samples_per_mode = 30;
  s.clutter_fraction = 0.2;
  s.clutter_modes = 4;
  const io::SynthData data = io::synth_dataset(s, 3);

  head::HeadConfig hc;
  hc.embedding.input_dim = 20;
  hc.embedding.layer_widths = {64, 32};
  hc.mixture.modes_per_class = 2;
  hc.mixture.posterior = head::PosteriorMode::max;
  const auto pool = train::make_training_pool(data.dataset, "train");
  hc.mixture.num_classes = pool.num_classes();
  Rng init = Rng(3).split("init");
  head::RepMetHead model(hc, init);
  train::TrainConfig tc;
  tc.optimizer.lr = 0.05;
  tc.batch.classes_per_batch = 12;
  tc.batch.instances_per_class = 4;
  tc.batch.background_per_batch = 12;
  tc.iterations = 3000;
  tc.seed = 3;
  train::fit(model, data.dataset, pool, tc);

  episodes::EpisodeSpec spec;
  spec.shots = {1};
  spec.ways = 5;
  spec.queries_per_class = 10;
  spec.background_fraction = 0.2;
  spec.episode_count = 100;
  spec.seed = 3;
  const auto eps = episodes::generate_episodes(data.dataset, spec);
  episodes::EpisodeEvalConfig ec;
  ec.finetune.steps = 50;
  const auto result = episodes::run_episodes(model, data.dataset, eps, ec);
  const auto& row = result.rows.at(0);
  const double acc = row.plain.accuracy, fa = row.plain.background_false_accept;
  const double ft = row.finetuned->accuracy;

  std::set<std::string> classes;
  for (const auto& e : eps) classes.insert(e.class_ids.begin(), e.class_ids.end());
  Outcome o;
  o.pass = eps.size() == 100 && classes.size() == 10 && row.background_queries == 100 * 10 && acc >= 0.95 &&
           fa <= 0.05 && ft >= acc - 0.01;
  o.detail = "accuracy " + num(acc) + ", background false-accept " + num(fa) + ", fine-tuned accuracy " + num(ft) +
             " (" + std::to_string(classes.size()) + " unseen classes, " + std::to_string(row.foreground_queries) +
             " + " + std::to_string(row.background_queries) + " queries)";
  return o;
}

// Detection metrics ---------------------------------------------------------

Outcome detection_metrics() {
  const auto pr = eval::average_precision({{0.9, true, 0}, {0.8, false, 1}, {0.7, true, 2}}, 2);
  const bool ap_ok = std::abs(pr.ap - 0.8333) <= 1e-4 && std::abs(pr.ap - 5.0 / 6.0) <= 1e-9;

  Rng rng(505);
  std::size_t agree = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto inst = testing::random_match_instance(rng);
    agree += eval::match_detections(inst.dets, inst.gts, 0.5).matched_gt ==
             testing::exhaustive_match(inst.dets, inst.gts, 0.5);
  }

  const eval::Box b{0, 0, 1, 1};
  const std::vector<eval::GroundTruthObject> gt{{0, "x", b, "c"}, {1, "y", b, "c"}};
  const std::vector<eval::DetectionRecord> d{{0, 0, "x", b, "c", 0.9},
                                             {1, 1, "y", eval::Box{5, 5, 6, 6}, "c", 0.95},
                                             {2, 1, "y", b, "c", 0.1}};
  const double pooled = eval::map_over_episodes(d, gt).map, averaged = eval::mean_per_episode_map(d, gt);
  const bool counterexample = std::abs(pooled - 2.0 / 3.0) < 1e-12 && std::abs(averaged - 0.75) < 1e-12;

  Outcome o;
  o.pass = ap_ok && agree == 1000 && counterexample;
  o.detail = "AP " + num(pr.ap, 10) + ", matcher agrees with exhaustive oracle on " + std::to_string(agree) +
             "/1000, pooled mAP " + num(pooled) + " vs per-episode mean " + num(averaged);
  return o;
}

// Posterior properties ------------------------------------------------------

Outcome posterior_properties() {
  Rng rng(606);
  std::size_t inputs = 0, sum_fail = 0, bg_fail = 0, argmax_fail = 0;
  double worst_sum = 0.0;
  while (inputs < 10000) {
    head::HeadConfig c;
    c.embedding.input_dim = 6;
    c.embedding.layer_widths = {8, 4};
    c.mixture.num_classes = 1 + rng.index(6);
    c.mixture.modes_per_class = 1 + rng.index(4);
    Rng init = rng.split("head", inputs);
    head::RepMetHead h(c, init);
    for (double& v : h.representatives().weights().value.data()) v = rng.normal(0.0, 0.5);
    // nonzero biases keep embeddings off the origin, where normalization is undefined
    for (diff::Parameter* p : h.parameters()) {
      if (p->name.ends_with("bias")) {
        for (double& v : p->value.data()) v = rng.normal(0.0, 0.5);
      }
    }
    h.set_mode(diff::BnMode::eval);
    const Tensor x = testing::normal_tensor(rng, 100, 6, 2.0);
    inputs += x.rows();

    const auto norm = h.infer(x, head::PosteriorMode::normalized);
    for (const auto& o : norm) {
      double s = 0.0;
      for (double p : o.class_posterior) s += p;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      sum_fail += std::abs(s - 1.0) > 1e-9;
    }
    std::vector<std::vector<std::size_t>> argmax;
    for (double sigma : {0.1, 0.5, 2.0}) {
      h.mixture().sigma = sigma;
      const auto mx = h.infer(x, head::PosteriorMode::max);
      std::vector<std::size_t> am;
      for (const auto& o : mx) {
        const double max_p = *std::max_element(o.mode_probs.values.begin(), o.mode_probs.values.end());
        bg_fail += o.background_posterior != 1.0 - max_p;
        // argmax recomputed from distances: the class with the nearest mode
        std::size_t nearest = 0;
        double best = 1e300;
        for (std::size_t k = 0; k < o.distances.num_classes(); ++k) {
          for (std::size_t m = 0; m < o.distances.layout.modes_of(k); ++m) {
            if (o.distances.at(k, m) < best) {
              best = o.distances.at(k, m);
              nearest = k;
            }
          }
        }
        am.push_back(o.predicted_class);
        argmax_fail += o.predicted_class != nearest && o.class_posterior[nearest] != o.class_posterior[o.predicted_class];
      }
      argmax.push_back(am);
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
      argmax_fail += argmax[0][i] != argmax[1][i] || argmax[1][i] != argmax[2][i];
    }
  }
  Outcome o;
  o.pass = sum_fail == 0 && bg_fail == 0 && argmax_fail == 0;
  o.detail = std::to_string(inputs) + " inputs: worst |sum-1| " + num(worst_sum, 3) + ", background mismatches " +
             std::to_string(bg_fail) + ", argmax changes across sigma " + std::to_string(argmax_fail);
  return o;
}

// CLI determinism -----------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "repmet_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const nlohmann::json cfg = {
      {"task", "detection"},
      {"seed", 9},
      {"head", {{"layer_widths", {32, 16}}, {"modes_per_class", 2}}},
      {"trainer",
       {{"batch_style", "class_balanced"},
        {"classes_per_batch", 6},
        {"instances_per_class", 3},
        {"background_per_batch", 4},
        {"iterations", 200},
        {"lr", 0.05}}},
      {"episodes", {{"shots", {1, 5}}, {"episode_count", 10}}},
      {"finetune", {{"steps", 10}}},
      {"synth",
       {{"classes", 10},
        {"modes_per_class", 2},
        {"dim", 12},
        {"samples_per_mode", 10},
        {"test_fraction", 0.25},
        {"unseen_classes", 6},
        {"unseen_samples_per_mode", 20},
        {"clutter_fraction", 0.2},
        {"objects_per_image", 4}}}};
  std::ofstream(root / "cfg.json") << cfg.dump(2);
  const std::string c = (root / "cfg.json").string();
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink) == 0; };

  bool ok = run({"synth-data", "--config", c, "--out", (root / "data").string()});
  const std::string data = (root / "data/dataset.jsonl").string();
  for (const char* tag : {"a", "b"}) {
    const fs::path d = root / tag;
    ok = ok && run({"train", "--config", c, "--data", data, "--out", (d / "train").string()});
    ok = ok && run({"gen-episodes", "--config", c, "--data", data, "--out", (d / "gen").string()});
    ok = ok && run({"eval-episodes", "--config", c, "--data", data, "--checkpoint",
                    (d / "train/checkpoint.json").string(), "--episodes", (d / "gen/episodes.jsonl").string(),
                    "--out", (d / "eval").string()});
  }
  std::size_t compared = 0, differ = 0;
  if (ok) {
    for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), root / "a");
      if (rel.filename() == "config.resolved.json") continue;  // records its own paths
      ++compared;
      differ += slurp(entry.path()) != slurp(root / "b" / rel);
    }
  }
  fs::remove_all(root);
  Outcome o;
  o.pass = ok && compared >= 8 && differ == 0;
  o.detail = ok ? std::to_string(compared) + " output files compared, " + std::to_string(differ) + " differ"
                : "a command failed: " + sink.str();
  return o;
}

// Attribute precision -------------------------------------------------------

Outcome attribute_precision() {
  Rng rng(808);
  // two well separated clusters of 12, attributes fixed per cluster
  const std::size_t n = 12;
  Tensor e(2 * n, 4);
  std::vector<std::vector<std::uint8_t>> attrs(2 * n);
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const bool second = i >= n;
    for (std::size_t k = 0; k < 4; ++k) e(i, k) = (second && k == 0 ? 50.0 : 0.0) + rng.normal(0.0, 0.1);
    attrs[i] = second ? std::vector<std::uint8_t>{0, 1, 1} : std::vector<std::uint8_t>{1, 0, 0};
  }
  std::vector<std::size_t> sizes;
  for (std::size_t s = 1; s < n; ++s) sizes.push_back(s);
  double worst = 1.0;
  for (double p : eval::attribute_neighborhood_precision(e, attrs, sizes)) worst = std::min(worst, p);

  // random attributes: each trial against its exact expectation given the attribute matrix
  const std::size_t trials = 300, items = 50, s = 5;
  const double rate = 0.3;
  double sum_dev = 0.0, sum_dev2 = 0.0, mean_expected = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor x = testing::normal_tensor(rng, items, 3);
    std::vector<std::vector<std::uint8_t>> a(items, std::vector<std::uint8_t>(4));
    std::vector<std::size_t> count(4, 0);
    for (auto& row : a) {
      for (std::size_t k = 0; k < 4; ++k) {
        row[k] = rng.uniform() < rate;
        count[k] += row[k];
      }
    }
    double expected = 0.0;
    std::size_t pairs = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      expected += static_cast<double>(count[k]) * static_cast<double>(count[k] - (count[k] > 0)) /
                  static_cast<double>(items - 1);
      pairs += count[k];
    }
    expected /= static_cast<double>(pairs);
    const std::size_t ss[] = {s};
    const double dev = eval::attribute_neighborhood_precision(x, a, ss)[0] - expected;
    sum_dev += dev;
    sum_dev2 += dev * dev;
    mean_expected += expected / trials;
  }
  const double mean_dev = sum_dev / trials;
  const double sd = std::sqrt((sum_dev2 / trials - mean_dev * mean_dev) / (trials - 1));
  Outcome o;
  o.pass = worst == 1.0 && std::abs(mean_dev) <= 3.0 * sd;
  o.detail = "two clusters: min precision " + num(worst) + " for s=1.." + std::to_string(n - 1) +
             "; random: mean deviation from base rate " + num(mean_dev, 3) + " (3 sd = " + num(3.0 * sd, 3) +
             ", base rate " + num(mean_expected, 3) + ")";
  return o;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "gradient check of the total loss and every primitive", 10.0, gradient_check},
      {2, "synthetic 5x3 mixture classification", 300.0, synthetic_classification},
      {3, "representatives sit on the embedded modes", 300.0, representatives_near_modes},
      {4, "1-shot 5-way episodes with background clutter", 120.0, few_shot_episodes},
      {5, "AP, greedy matching and pooled mAP", 60.0, detection_metrics},
      {6, "posterior normalization, background and sigma invariance", 60.0, posterior_properties},
      {7, "CLI outputs byte-identical across runs", 120.0, cli_determinism},
      {8, "attribute neighborhood precision", 60.0, attribute_precision},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = o.pass && secs < c.time_limit_s;
    failures += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.title << ": " << o.detail << " ("
              << num(secs, 3) << " s, limit " << c.time_limit_s << " s)" << std::endl;
  }
  std::cout << (failures ? "FAILED " : "ALL PASSED ") << criteria.size() - failures << "/" << criteria.size()
            << std::endl;
  return failures ? 1 : 0;
}
