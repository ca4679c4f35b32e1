#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "repmet/core/error.hpp"
#include "repmet/io/config.hpp"
#include "repmet/io/dataset.hpp"
#include "repmet/io/synth.hpp"

using namespace repmet;
using namespace repmet::io;
using nlohmann::json;

TEST_CASE("dataset parses and indexes") {
  std::istringstream in(
      "{\"id\":\"a\",\"label\":\"cat\",\"features\":[1,2]}\n"
      "\n"
      "{\"id\":\"b\",\"label\":\"background\",\"features\":[0,0],\"box\":[0,0,1,1],\"image_id\":\"im\"}\n"
      "{\"id\":\"c\",\"label\":\"dog\",\"features\":[3,4],\"split\":\"test\",\"group\":\"unseen\",\"attributes\":[1,0]}\n");
  const Dataset d = parse_dataset(in);
  REQUIRE(d.size() == 3);
  CHECK(d.feature_dim() == 2);
  CHECK(d.class_names() == std::vector<std::string>{"cat", "dog"});
  CHECK(d.background() == std::vector<std::size_t>{1});
  CHECK(d.label_of(2) == head::Label::of(1));
  CHECK(d.label_of(1).is_background());
  CHECK(*d.find("c") == 2);
  CHECK_FALSE(d.find("zzz").has_value());
  CHECK(d.records()[1].box == eval::Box{0, 0, 1, 1});
  CHECK(in_split(d.records()[0], "train"));
  CHECK(in_split(d.records()[2], "test"));
  const auto x = d.features({2, 0});
  CHECK(x(0, 1) == 4.0);
  CHECK(x(1, 0) == 1.0);
}

TEST_CASE("dataset errors carry the line number") {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      parse_dataset(in);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  const std::string ok = "{\"id\":\"a\",\"label\":\"x\",\"features\":[1,2]}\n";
  CHECK(line_of(ok + ok) == 2);  // duplicate id
  CHECK(line_of(ok + "{\"id\":\"b\",\"label\":\"x\",\"features\":[1,2],\"box\":[0,0,1,1,2]}\n") == 2);
  CHECK(line_of(ok + "{\"id\":\"b\",\"label\":\"x\",\"features\":[1]}\n") == 2);
  CHECK(line_of(ok + "\n{\"id\":\"b\",\"label\":\"x\",\"features\":[1,2],\"box\":[1,0,0,1]}\n") == 3);
  CHECK(line_of(ok + "{\"id\":\"b\",\"label\":\"x\",\"features\":[1,2],\"colour\":1}\n") == 2);
  CHECK(line_of("not json\n") == 1);
  CHECK(line_of("{\"id\":\"b\",\"label\":\"x\",\"features\":[1,2],\"split\":\"dev\"}\n") == 1);
  CHECK(line_of("{\"id\":\"b\",\"label\":\"x\",\"features\":[1,2],\"schema_version\":9}\n") == 1);

  std::istringstream five(ok + "{\"id\":\"b\",\"label\":\"x\",\"features\":[1,2],\"box\":[0,0,1,1,2]}\n");
  try {
    parse_dataset(five);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("5 elements") != std::string::npos);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("dataset round trip is exact") {
  SynthConfig c;
  c.classes = 3;
  c.modes_per_class = 2;
  c.samples_per_mode = 5;
  c.attributes = 4;
  c.objects_per_image = 3;
  c.clutter_fraction = 0.2;
  c.test_fraction = 0.4;
  c.unseen_classes = 2;
  const Dataset d = synth_dataset(c, 1).dataset;
  std::stringstream s;
  write_dataset(s, d);
  const Dataset back = parse_dataset(s);
  CHECK(back.records() == d.records());
  std::stringstream again;
  write_dataset(again, back);
  CHECK(again.str() == s.str());
}

TEST_CASE("synthetic data layout") {
  SynthConfig c;  // 5 classes x 3 modes x 40, dim 20
  const SynthData s = synth_dataset(c, 7);
  CHECK(s.dataset.size() == 600);
  CHECK(s.dataset.num_classes() == 5);
  CHECK(s.dataset.feature_dim() == 20);
  CHECK(s.clusters.size() == 15);
  for (std::size_t i = 0; i < s.clusters.size(); ++i) {
    double norm = 0.0;
    for (double v : s.clusters[i].center) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(c.center_radius).epsilon(1e-12));
    for (std::size_t j = 0; j < i; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < c.dim; ++k) {
        const double t = s.clusters[i].center[k] - s.clusters[j].center[k];
        d2 += t * t;
      }
      CHECK(std::sqrt(d2) >= c.min_separation);
    }
  }
  CHECK(monte_carlo_bayes_error(s, c.spread, 20000, 3) < 0.001);

  const SynthData again = synth_dataset(c, 7);
  CHECK(again.dataset.records() == s.dataset.records());
  CHECK_FALSE(synth_dataset(c, 8).dataset.records() == s.dataset.records());
}

TEST_CASE("zero spread places every sample on its center") {
  SynthConfig c;
  c.spread = 0.0;
  c.classes = 2;
  c.samples_per_mode = 3;
  const SynthData s = synth_dataset(c, 2);
  for (std::size_t r = 0; r < s.dataset.size(); ++r) {
    const auto& cl = s.clusters[s.record_cluster[r]];
    CHECK(s.dataset.records()[r].features == cl.center);
    CHECK(s.dataset.records()[r].label == cl.label);
  }
  CHECK(monte_carlo_bayes_error(s, 0.0, 1000, 1) == 0.0);
}

TEST_CASE("synthetic splits, groups and clutter") {
  SynthConfig c;
  c.classes = 4;
  c.modes_per_class = 2;
  c.samples_per_mode = 10;
  c.test_fraction = 0.3;
  c.unseen_classes = 3;
  c.unseen_samples_per_mode = 20;
  c.clutter_fraction = 0.5;
  c.attributes = 3;
  const SynthData s = synth_dataset(c, 5);
  std::size_t test = 0, unseen = 0, bg = 0;
  std::set<std::string> unseen_labels;
  for (const auto& r : s.dataset.records()) {
    test += *r.split == "test";
    if (r.is_background()) {
      ++bg;
      continue;
    }
    if (*r.group == "unseen") {
      ++unseen;
      unseen_labels.insert(r.label);
    }
    CHECK(r.attributes->size() == 3);
  }
  CHECK(unseen == 60);
  CHECK(unseen_labels.size() == 3);
  CHECK(bg == 70);
  std::vector<std::size_t> cluster_size(s.clusters.size(), 0);
  for (std::size_t k : s.record_cluster) ++cluster_size[k];
  std::size_t expected_test = 0;
  for (std::size_t n : cluster_size) expected_test += static_cast<std::size_t>(std::lround(0.3 * static_cast<double>(n)));
  CHECK(test == expected_test);
  CHECK(cluster_size.front() == 10);
  // attributes are shared within a class
  for (std::size_t k = 0; k < s.dataset.num_classes(); ++k) {
    const auto& m = s.dataset.members(k);
    for (std::size_t r : m) CHECK(s.dataset.records()[r].attributes == s.dataset.records()[m[0]].attributes);
  }
  SynthConfig bad = c;
  bad.test_fraction = 1.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("run config presets and defaults") {
  const RunConfig det = RunConfig::preset(Task::detection);
  CHECK(det.head.mixture.modes_per_class == 5);
  CHECK(det.head.embedding.layer_widths == std::vector<std::size_t>{1024, 1024, 256});
  CHECK(det.head.mixture.posterior == head::PosteriorMode::max);
  CHECK(det.trainer.batch_style == train::BatchStyle::image_group);
  const RunConfig cls = RunConfig::preset(Task::classification);
  CHECK(cls.head.mixture.modes_per_class == 3);
  CHECK(cls.head.embedding.layer_widths == std::vector<std::size_t>{2048, 1024});
  CHECK(cls.head.mixture.posterior == head::PosteriorMode::normalized);

  const RunConfig from_task = run_config_from_json(json{{"task", "detection"}});
  CHECK(run_config_to_json(from_task) == run_config_to_json(det));

  const RunConfig over = run_config_from_json(json{{"task", "detection"}, {"head", {{"modes_per_class", 2}}}});
  CHECK(over.head.mixture.modes_per_class == 2);
  CHECK(over.head.embedding.layer_widths == det.head.embedding.layer_widths);
}

TEST_CASE("run config round trip and strictness") {
  RunConfig c = RunConfig::preset(Task::classification);
  c.apply_seed(42);
  c.trainer.iterations = 77;
  c.trainer.project_representatives = true;
  c.episodes.shots = {1, 3};
  c.synth.unseen_classes = 4;
  const json j = run_config_to_json(c);
  CHECK(run_config_to_json(run_config_from_json(j)) == j);
  CHECK(j.at("seed") == 42);

  auto message = [](const json& doc) -> std::string {
    try {
      run_config_from_json(doc);
    } catch (const std::exception& e) {
      return e.what();
    }
    return "";
  };
  CHECK(message(json{{"trainer", {{"learning_rate", 0.1}}}}).find("trainer.learning_rate") != std::string::npos);
  CHECK(message(json{{"bogus", 1}}).find("bogus") != std::string::npos);
  CHECK(message(json{{"synth", {{"dims", 3}}}}).find("synth.dims") != std::string::npos);
  CHECK_FALSE(message(json{{"task", "segmentation"}}).empty());
  CHECK_FALSE(message(json{{"head", {{"sigma", -1.0}}}}).empty());
  CHECK_FALSE(message(json{{"schema_version", 5}}).empty());
}
