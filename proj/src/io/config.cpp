#include "repmet/io/config.hpp"

#include <fstream>
#include <optional>
#include <set>

#include "repmet/core/error.hpp"

namespace repmet::io {

using nlohmann::json;

std::string to_string(Task task) { return task == Task::classification ? "classification" : "detection"; }

Task task_from_string(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "detection") return Task::detection;
  throw InvalidArgument("unknown task '" + s + "' (expected classification|detection)");
}

RunConfig RunConfig::preset(Task task) {
  RunConfig c;
  c.task = task;
  if (task == Task::classification) {
    c.head.embedding = head::EmbeddingConfig::classification(0);
    c.head.mixture.modes_per_class = 3;
    c.head.mixture.posterior = head::PosteriorMode::normalized;
  } else {
    c.head.embedding = head::EmbeddingConfig::detection(0);
    c.head.mixture.modes_per_class = 5;
    c.head.mixture.posterior = head::PosteriorMode::max;
    c.trainer.batch_style = train::BatchStyle::image_group;
  }
  return c;
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  trainer.seed = s;
  episodes.seed = s;
}

void RunConfig::validate() const {
  if (head.embedding.layer_widths.empty()) throw InvalidArgument("head.layer_widths must not be empty");
  for (std::size_t w : head.embedding.layer_widths) {
    if (w == 0) throw InvalidArgument("head.layer_widths entries must be >= 1");
  }
  head.mixture.validate();
  trainer.validate();
  episodes.validate();
  episode_eval.validate();
  synth.validate();
  if (grad_check.classes < 2 || grad_check.modes_per_class == 0 || grad_check.input_dim == 0 ||
      grad_check.layer_widths.empty() || grad_check.batch < 2) {
    throw InvalidArgument("grad_check: needs >= 2 classes, >= 1 mode, input_dim >= 1, widths, batch >= 2");
  }
  if (!(grad_check.step > 0.0) || !(grad_check.tolerance > 0.0)) {
    throw InvalidArgument("grad_check: step and tolerance must be > 0");
  }
}

json run_config_to_json(const RunConfig& c) {
  const auto& e = c.head.embedding;
  const auto& m = c.head.mixture;
  const auto& t = c.trainer;
  const auto& ep = c.episodes;
  const auto& ev = c.episode_eval;
  const auto& g = c.grad_check;
  return {
      {"schema_version", kRunConfigSchemaVersion},
      {"task", to_string(c.task)},
      {"seed", c.seed},
      {"data", {{"dataset", c.data.dataset}, {"checkpoint", c.data.checkpoint}, {"episodes", c.data.episodes}}},
      {"head",
       {{"input_dim", e.input_dim},
        {"layer_widths", e.layer_widths},
        {"final_l2_normalize", e.final_l2_normalize},
        {"modes_per_class", m.modes_per_class},
        {"sigma", m.sigma},
        {"margin", m.margin},
        {"posterior_mode", head::to_string(m.posterior)}}},
      {"trainer",
       {{"optimizer", train::to_string(t.optimizer.kind)},
        {"lr", t.optimizer.lr},
        {"momentum", t.optimizer.momentum},
        {"weight_decay", t.optimizer.weight_decay},
        {"beta1", t.optimizer.beta1},
        {"beta2", t.optimizer.beta2},
        {"epsilon", t.optimizer.epsilon},
        {"classes_per_batch", t.batch.classes_per_batch},
        {"instances_per_class", t.batch.instances_per_class},
        {"background_per_batch", t.batch.background_per_batch},
        {"batch_style", train::to_string(t.batch_style)},
        {"iterations", t.iterations},
        {"lr_step", t.lr_step},
        {"lr_gamma", t.lr_gamma},
        {"eval_every", t.eval_every},
        {"project_representatives", t.project_representatives},
        {"split", c.train_split}}},
      {"episodes",
       {{"shots", ep.shots},
        {"ways", ep.ways},
        {"queries_per_class", ep.queries_per_class},
        {"background_fraction", ep.background_fraction},
        {"episode_count", ep.episode_count},
        {"class_pool", episodes::to_string(ep.pool)},
        {"support_iou", ev.support_iou},
        {"match_iou", ev.match_iou},
        {"recall_k", ev.recall_k},
        {"threads", ev.threads}}},
      {"finetune",
       {{"enabled", ev.with_finetune},
        {"steps", ev.finetune.steps},
        {"lr", ev.finetune.lr},
        {"momentum", ev.finetune.momentum}}},
      {"eval", {{"split", c.eval.split}}},
      {"grad_check",
       {{"classes", g.classes},
        {"modes_per_class", g.modes_per_class},
        {"input_dim", g.input_dim},
        {"layer_widths", g.layer_widths},
        {"batch", g.batch},
        {"step", g.step},
        {"tolerance", g.tolerance}}},
      {"synth", synth_config_to_json(c.synth)},
  };
}

namespace {

// Reads the keys of one object, rejecting any key it was not asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      j_.at(key).get_to(field);
    } catch (const json::exception&) {
      throw InvalidArgument("config: bad value for '" + dotted(key) + "'");
    }
  }

  template <typename T, typename Conv>
  void get_as(const std::string& key, T& field, Conv conv) {
    std::string text;
    get(key, text);
    if (j_.contains(key)) field = conv(text);
  }

  std::optional<Section> sub(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), dotted(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw InvalidArgument("config: unknown key '" + dotted(key) + "'");
    }
  }

 private:
  std::string dotted(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig run_config_from_json(const json& j) {
  Section root(j, "");
  int version = kRunConfigSchemaVersion;
  root.get("schema_version", version);
  if (version != kRunConfigSchemaVersion) {
    throw InvalidArgument("config: unsupported schema_version " + std::to_string(version));
  }
  Task task = Task::classification;
  root.get_as("task", task, task_from_string);
  RunConfig c = RunConfig::preset(task);
  std::uint64_t seed = 0;
  root.get("seed", seed);

  if (auto s = root.sub("data")) {
    s->get("dataset", c.data.dataset);
    s->get("checkpoint", c.data.checkpoint);
    s->get("episodes", c.data.episodes);
    s->finish();
  }
  if (auto s = root.sub("head")) {
    s->get("input_dim", c.head.embedding.input_dim);
    s->get("layer_widths", c.head.embedding.layer_widths);
    s->get("final_l2_normalize", c.head.embedding.final_l2_normalize);
    s->get("modes_per_class", c.head.mixture.modes_per_class);
    s->get("sigma", c.head.mixture.sigma);
    s->get("margin", c.head.mixture.margin);
    s->get_as("posterior_mode", c.head.mixture.posterior, head::posterior_mode_from_string);
    s->finish();
  }
  if (auto s = root.sub("trainer")) {
    auto& t = c.trainer;
    s->get_as("optimizer", t.optimizer.kind, train::optimizer_kind_from_string);
    s->get("lr", t.optimizer.lr);
    s->get("momentum", t.optimizer.momentum);
    s->get("weight_decay", t.optimizer.weight_decay);
    s->get("beta1", t.optimizer.beta1);
    s->get("beta2", t.optimizer.beta2);
    s->get("epsilon", t.optimizer.epsilon);
    s->get("classes_per_batch", t.batch.classes_per_batch);
    s->get("instances_per_class", t.batch.instances_per_class);
    s->get("background_per_batch", t.batch.background_per_batch);
    s->get_as("batch_style", t.batch_style, train::batch_style_from_string);
    s->get("iterations", t.iterations);
    s->get("lr_step", t.lr_step);
    s->get("lr_gamma", t.lr_gamma);
    s->get("eval_every", t.eval_every);
    s->get("project_representatives", t.project_representatives);
    s->get("split", c.train_split);
    s->finish();
  }
  if (auto s = root.sub("episodes")) {
    auto& ep = c.episodes;
    s->get("shots", ep.shots);
    s->get("ways", ep.ways);
    s->get("queries_per_class", ep.queries_per_class);
    s->get("background_fraction", ep.background_fraction);
    s->get("episode_count", ep.episode_count);
    s->get_as("class_pool", ep.pool, episodes::class_pool_from_string);
    s->get("support_iou", c.episode_eval.support_iou);
    s->get("match_iou", c.episode_eval.match_iou);
    s->get("recall_k", c.episode_eval.recall_k);
    s->get("threads", c.episode_eval.threads);
    s->finish();
  }
  if (auto s = root.sub("finetune")) {
    s->get("enabled", c.episode_eval.with_finetune);
    s->get("steps", c.episode_eval.finetune.steps);
    s->get("lr", c.episode_eval.finetune.lr);
    s->get("momentum", c.episode_eval.finetune.momentum);
    s->finish();
  }
  if (auto s = root.sub("eval")) {
    s->get("split", c.eval.split);
    s->finish();
  }
  if (auto s = root.sub("grad_check")) {
    auto& g = c.grad_check;
    s->get("classes", g.classes);
    s->get("modes_per_class", g.modes_per_class);
    s->get("input_dim", g.input_dim);
    s->get("layer_widths", g.layer_widths);
    s->get("batch", g.batch);
    s->get("step", g.step);
    s->get("tolerance", g.tolerance);
    s->finish();
  }
  root.sub("synth");
  if (j.contains("synth")) c.synth = synth_config_from_json(j.at("synth"));
  root.finish();

  c.apply_seed(seed);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace repmet::io
