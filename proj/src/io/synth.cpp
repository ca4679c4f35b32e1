#include "repmet/io/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "repmet/core/error.hpp"
#include "repmet/core/rng.hpp"

namespace repmet::io {

using nlohmann::json;

void SynthConfig::validate() const {
  if (classes == 0) throw InvalidArgument("synth: classes must be >= 1");
  if (modes_per_class == 0) throw InvalidArgument("synth: modes_per_class must be >= 1");
  if (dim == 0) throw InvalidArgument("synth: dim must be >= 1");
  if (samples_per_mode == 0) throw InvalidArgument("synth: samples_per_mode must be >= 1");
  if (!(spread >= 0.0)) throw InvalidArgument("synth: spread must be >= 0");
  if (!(center_radius > 0.0)) throw InvalidArgument("synth: center_radius must be > 0");
  if (!(min_separation >= 0.0) || min_separation > 2.0 * center_radius) {
    throw InvalidArgument("synth: min_separation must be in [0, 2 * center_radius]");
  }
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw InvalidArgument("synth: test_fraction must be in [0, 1)");
  if (unseen_classes > 0 && (unseen_modes_per_class == 0 || unseen_samples_per_mode == 0)) {
    throw InvalidArgument("synth: unseen classes need >= 1 mode and >= 1 sample per mode");
  }
  if (!(clutter_fraction >= 0.0)) throw InvalidArgument("synth: clutter_fraction must be >= 0");
  if (clutter_fraction > 0.0 && clutter_modes == 0) throw InvalidArgument("synth: clutter needs clutter_modes >= 1");
  if (!(clutter_spread >= 0.0)) throw InvalidArgument("synth: clutter_spread must be >= 0");
}

json synth_config_to_json(const SynthConfig& c) {
  return {{"classes", c.classes},
          {"modes_per_class", c.modes_per_class},
          {"dim", c.dim},
          {"samples_per_mode", c.samples_per_mode},
          {"spread", c.spread},
          {"center_radius", c.center_radius},
          {"min_separation", c.min_separation},
          {"test_fraction", c.test_fraction},
          {"unseen_classes", c.unseen_classes},
          {"unseen_modes_per_class", c.unseen_modes_per_class},
          {"unseen_samples_per_mode", c.unseen_samples_per_mode},
          {"clutter_fraction", c.clutter_fraction},
          {"clutter_modes", c.clutter_modes},
          {"clutter_spread", c.clutter_spread},
          {"attributes", c.attributes},
          {"objects_per_image", c.objects_per_image}};
}

SynthConfig synth_config_from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("synth: config must be an object");
  SynthConfig c;
  const json defaults = synth_config_to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw InvalidArgument("config: unknown key 'synth." + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw InvalidArgument(std::string("synth: bad value for '") + key + "'");
    }
  };
  get("classes", c.classes);
  get("modes_per_class", c.modes_per_class);
  get("dim", c.dim);
  get("samples_per_mode", c.samples_per_mode);
  get("spread", c.spread);
  get("center_radius", c.center_radius);
  get("min_separation", c.min_separation);
  get("test_fraction", c.test_fraction);
  get("unseen_classes", c.unseen_classes);
  get("unseen_modes_per_class", c.unseen_modes_per_class);
  get("unseen_samples_per_mode", c.unseen_samples_per_mode);
  get("clutter_fraction", c.clutter_fraction);
  get("clutter_modes", c.clutter_modes);
  get("clutter_spread", c.clutter_spread);
  get("attributes", c.attributes);
  get("objects_per_image", c.objects_per_image);
  c.validate();
  return c;
}

diff::Tensor SynthData::centers() const {
  if (clusters.empty()) return {};
  diff::Tensor t(clusters.size(), clusters.front().center.size());
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    for (std::size_t k = 0; k < t.cols(); ++k) t(i, k) = clusters[i].center[k];
  }
  return t;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

std::vector<double> on_sphere(Rng& rng, std::size_t dim, double radius) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      n2 += x * x;
    }
  } while (n2 < 1e-12);
  const double s = radius / std::sqrt(n2);
  for (auto& x : v) x *= s;
  return v;
}

std::string class_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%03zu", k);
  return buf;
}

}  // namespace

SynthData synth_dataset(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root = Rng(seed).split("synth");
  Rng center_rng = root.split("centers");
  Rng sample_rng = root.split("samples");
  Rng attr_rng = root.split("attributes");

  SynthData out;
  const double min_sq = config.min_separation * config.min_separation;
  auto add_cluster = [&](std::string label, std::size_t mode, bool unseen) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 100000) {
        throw InvalidArgument("synth: cannot place " + std::to_string(out.clusters.size() + 1) +
                              " centers with min_separation " + std::to_string(config.min_separation));
      }
      auto c = on_sphere(center_rng, config.dim, config.center_radius);
      bool ok = true;
      for (const auto& other : out.clusters) {
        if (sq_dist(c, other.center) < min_sq) {
          ok = false;
          break;
        }
      }
      if (ok) {
        out.clusters.push_back({std::move(label), mode, unseen, std::move(c)});
        return;
      }
    }
  };

  const std::size_t total_classes = config.classes + config.unseen_classes;
  for (std::size_t k = 0; k < total_classes; ++k) {
    const bool unseen = k >= config.classes;
    const std::size_t modes = unseen ? config.unseen_modes_per_class : config.modes_per_class;
    for (std::size_t m = 0; m < modes; ++m) add_cluster(class_name(k), m, unseen);
  }
  const std::size_t fg_clusters = out.clusters.size();

  std::size_t fg_count = config.classes * config.modes_per_class * config.samples_per_mode +
                         config.unseen_classes * config.unseen_modes_per_class * config.unseen_samples_per_mode;
  const auto bg_count = static_cast<std::size_t>(std::llround(config.clutter_fraction * static_cast<double>(fg_count)));
  if (bg_count > 0) {
    for (std::size_t m = 0; m < config.clutter_modes; ++m) add_cluster(kBackgroundLabel, m, false);
  }

  std::vector<std::vector<std::uint8_t>> class_attrs(total_classes);
  for (auto& a : class_attrs) {
    for (std::size_t i = 0; i < config.attributes; ++i) a.push_back(attr_rng.uniform() < 0.5 ? 1 : 0);
  }

  std::vector<FeatureRecord> records;
  auto emit = [&](std::size_t cluster, std::size_t class_index, std::size_t index, std::size_t count, double spread,
                  std::string id) {
    const auto& cl = out.clusters[cluster];
    FeatureRecord r;
    r.id = std::move(id);
    r.label = cl.label;
    r.features = cl.center;
    if (spread > 0.0) {
      for (auto& x : r.features) x += spread * sample_rng.normal();
    }
    const auto test_count = static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(count)));
    r.split = index + test_count >= count ? "test" : "train";
    const bool bg = cl.label == kBackgroundLabel;
    if (cl.unseen) {
      r.group = "unseen";
    } else if (!bg) {
      r.group = "seen";
    }
    if (config.attributes > 0) {
      r.attributes = bg ? std::vector<std::uint8_t>(config.attributes, 0) : class_attrs[class_index];
    }
    records.push_back(std::move(r));
    out.record_cluster.push_back(cluster);
  };

  std::size_t cluster = 0;
  for (std::size_t k = 0; k < total_classes; ++k) {
    const bool unseen = k >= config.classes;
    const std::size_t modes = unseen ? config.unseen_modes_per_class : config.modes_per_class;
    const std::size_t count = unseen ? config.unseen_samples_per_mode : config.samples_per_mode;
    for (std::size_t m = 0; m < modes; ++m, ++cluster) {
      for (std::size_t i = 0; i < count; ++i) {
        emit(cluster, k, i, count, config.spread,
             class_name(k) + "_m" + std::to_string(m) + "_" + std::to_string(i));
      }
    }
  }
  for (std::size_t i = 0; i < bg_count; ++i) {
    const std::size_t m = i % config.clutter_modes;
    const std::size_t per_mode = bg_count / config.clutter_modes + (m < bg_count % config.clutter_modes ? 1 : 0);
    emit(fg_clusters + m, 0, i / config.clutter_modes, per_mode, config.clutter_spread, "bg_" + std::to_string(i));
  }

  if (config.objects_per_image > 0) {
    // Grid cells of side 10 with a 1-unit gap keep boxes of one image disjoint.
    const std::size_t per = config.objects_per_image;
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(per))));
    Rng order_rng = root.split("images");
    const auto order = order_rng.sample_without_replacement(records.size(), records.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      auto& r = records[order[pos]];
      const std::size_t slot = pos % per;
      const double x = 11.0 * static_cast<double>(slot % side);
      const double y = 11.0 * static_cast<double>(slot / side);
      r.image_id = "img_" + std::to_string(pos / per);
      r.box = eval::Box{x, y, x + 10.0, y + 10.0};
    }
  }

  out.dataset = Dataset(std::move(records));
  return out;
}

json synth_meta_to_json(const SynthData& data, const SynthConfig& config, std::uint64_t seed) {
  json clusters = json::array();
  for (const auto& c : data.clusters) {
    clusters.push_back({{"label", c.label}, {"mode", c.mode}, {"unseen", c.unseen}, {"center", c.center}});
  }
  return {{"schema_version", kSynthMetaSchemaVersion},
          {"seed", seed},
          {"config", synth_config_to_json(config)},
          {"clusters", clusters},
          {"record_cluster", data.record_cluster}};
}

void save_synth_meta(const std::filesystem::path& path, const SynthData& data, const SynthConfig& config,
                     std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << synth_meta_to_json(data, config, seed).dump(2) << '\n';
  if (!out) throw InvalidArgument("write failed: " + path.string());
}

double monte_carlo_bayes_error(const SynthData& data, double spread, std::size_t samples, std::uint64_t seed) {
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < data.clusters.size(); ++i) {
    if (data.clusters[i].label != kBackgroundLabel) fg.push_back(i);
  }
  if (fg.empty() || samples == 0) throw InvalidArgument("monte_carlo_bayes_error: nothing to sample");
  Rng rng = Rng(seed).split("bayes");
  std::size_t wrong = 0;
  std::vector<double> x;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto& src = data.clusters[fg[rng.index(fg.size())]];
    x = src.center;
    for (auto& v : x) v += spread * rng.normal();
    double best = std::numeric_limits<double>::infinity();
    const std::string* label = nullptr;
    for (std::size_t i : fg) {
      const double d = sq_dist(x, data.clusters[i].center);
      if (d < best) {
        best = d;
        label = &data.clusters[i].label;
      }
    }
    if (*label != src.label) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(samples);
}

}  // namespace repmet::io
