#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "repmet/core/error.hpp"
#include "repmet/core/rng.hpp"
#include "repmet/diff/grad_check.hpp"
#include "repmet/episodes/episodes.hpp"
#include "repmet/episodes/runner.hpp"
#include "repmet/eval/detection.hpp"
#include "repmet/eval/metrics.hpp"
#include "repmet/head/checkpoint.hpp"
#include "repmet/io/config.hpp"
#include "repmet/io/dataset.hpp"
#include "repmet/io/synth.hpp"
#include "repmet/train/trainer.hpp"

namespace repmet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kManifestSchemaVersion = 1;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string episodes;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> threads;
};

// Files written by a command. Unless committed, everything registered is
// deleted again, and the directory too if this run created it.
class OutputDir {
 public:
  explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_ = true;
    }
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  ~OutputDir() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(f, ec);
    if (created_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

  fs::path add(const std::string& name, int schema_version) {
    fs::path p = dir_ / name;
    files_.push_back(p);
    versions_[name] = schema_version;
    return p;
  }

  void write(const std::string& name, int schema_version, const std::string& content) {
    const fs::path p = add(name, schema_version);
    std::ofstream f(p, std::ios::binary);
    f << content;
    if (!f) throw Error("cannot write " + p.string());
  }

  const std::map<std::string, int>& versions() const { return versions_; }
  const fs::path& dir() const { return dir_; }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  bool created_ = false;
  bool committed_ = false;
  std::vector<fs::path> files_;
  std::map<std::string, int> versions_;
};

fs::path output_dir(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "repmet_out";
}

io::RunConfig resolve(const Options& o, io::Task default_task) {
  io::RunConfig c = o.config.empty() ? io::RunConfig::preset(default_task) : io::load_run_config(o.config);
  if (o.seed) c.apply_seed(*o.seed);
  if (!o.data.empty()) c.data.dataset = o.data;
  if (!o.checkpoint.empty()) c.data.checkpoint = o.checkpoint;
  if (!o.episodes.empty()) c.data.episodes = o.episodes;
  if (o.iterations) c.trainer.iterations = *o.iterations;
  if (o.threads) c.episode_eval.threads = *o.threads;
  c.validate();
  return c;
}

const std::string& require(const std::string& path, const char* what) {
  if (path.empty()) throw InvalidArgument(std::string("no ") + what + " given (flag or config data section)");
  return path;
}

std::string fmt(double v, int precision = 17) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// The resolved config and a manifest of every output with its schema version.
void finish(OutputDir& dir, const std::string& command, const io::RunConfig& c, std::ostream& out) {
  dir.write("config.resolved.json", io::kRunConfigSchemaVersion, io::run_config_to_json(c).dump(2) + "\n");
  json outputs = json::object();
  for (const auto& [name, v] : dir.versions()) outputs[name] = {{"schema_version", v}};
  const json manifest = {{"schema_version", kManifestSchemaVersion}, {"command", command}, {"outputs", outputs}};
  dir.write("run.json", kManifestSchemaVersion, manifest.dump(2) + "\n");
  dir.commit();
  out << "config: " << (dir.dir() / "config.resolved.json").string() << '\n';
}

std::string dataset_text(const io::Dataset& d) {
  std::ostringstream s;
  io::write_dataset(s, d);
  return s.str();
}

void cmd_synth(const Options& o, std::ostream& out) {
  const io::RunConfig c = resolve(o, io::Task::classification);
  const io::SynthData data = io::synth_dataset(c.synth, c.seed);
  OutputDir dir(output_dir(o));
  dir.write("dataset.jsonl", io::kDatasetSchemaVersion, dataset_text(data.dataset));
  dir.write("dataset.meta.json", io::kSynthMetaSchemaVersion,
            io::synth_meta_to_json(data, c.synth, c.seed).dump(2) + "\n");
  finish(dir, "synth-data", c, out);
  out << "records " << data.dataset.size() << " classes " << data.dataset.num_classes() << " background "
      << data.dataset.background().size() << '\n';
}

std::vector<head::Label> labels_for(const io::Dataset& d, const train::TrainingPool& pool,
                                    const std::vector<std::size_t>& rows) {
  std::vector<head::Label> labels;
  for (std::size_t r : rows) labels.push_back(pool.label_of(d, r));
  return labels;
}

void cmd_train(const Options& o, std::ostream& out) {
  io::RunConfig c = resolve(o, io::Task::classification);
  const io::Dataset ds = io::load_dataset(require(c.data.dataset, "dataset"));
  if (c.head.embedding.input_dim == 0) c.head.embedding.input_dim = ds.feature_dim();
  if (c.head.embedding.input_dim != ds.feature_dim()) {
    throw InvalidArgument("head.input_dim " + std::to_string(c.head.embedding.input_dim) + " but dataset has " +
                          std::to_string(ds.feature_dim()) + " features");
  }
  const train::TrainingPool pool = train::make_training_pool(ds, c.train_split);
  head::HeadConfig hc = c.head;
  hc.mixture.num_classes = pool.num_classes();
  Rng init = Rng(c.seed).split("init");
  head::RepMetHead model(hc, init);
  const train::FitResult fit = train::fit(model, ds, pool, c.trainer);

  std::vector<std::size_t> rows;
  for (const auto& m : pool.members) rows.insert(rows.end(), m.begin(), m.end());
  const double err =
      eval::classification_error(model, ds.features(rows), labels_for(ds, pool, rows), model.mixture().posterior);

  OutputDir dir(output_dir(o));
  dir.write("checkpoint.json", head::kCheckpointSchemaVersion, head::checkpoint_to_json(model, pool.class_names));
  std::ostringstream trace;
  train::write_loss_trace_csv(trace, fit.trace);
  dir.write("loss_trace.csv", 1, trace.str());
  finish(dir, "train", c, out);
  out << "iterations " << fit.trace.size() << " final_loss " << fmt(fit.trace.empty() ? 0.0 : fit.trace.back().total, 8)
      << " train_error_pct " << fmt(err, 8) << '\n';
}

void cmd_eval_classify(const Options& o, std::ostream& out) {
  const io::RunConfig c = resolve(o, io::Task::classification);
  const head::Checkpoint ckpt = head::load_checkpoint(require(c.data.checkpoint, "checkpoint"));
  const io::Dataset ds = io::load_dataset(require(c.data.dataset, "dataset"));
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < ckpt.class_names.size(); ++k) index[ckpt.class_names[k]] = k;

  std::vector<std::size_t> rows;
  std::vector<head::Label> labels;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto& rec = ds.records()[r];
    if (!io::in_split(rec, c.eval.split)) continue;
    auto it = index.find(rec.label);
    if (it == index.end()) continue;
    rows.push_back(r);
    labels.push_back(head::Label::of(it->second));
  }
  if (rows.empty()) throw InvalidArgument("no '" + c.eval.split + "' records of the checkpoint's classes");
  const auto outputs = ckpt.head.infer(ds.features(rows));
  std::ostringstream csv;
  csv << "id,label,predicted,score,background\n";
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& o2 = outputs[i];
    if (o2.predicted_class != labels[i].index()) ++wrong;
    csv << ds.records()[rows[i]].id << ',' << ds.records()[rows[i]].label << ',' << ckpt.class_names[o2.predicted_class]
        << ',' << fmt(o2.class_posterior[o2.predicted_class]) << ',' << fmt(o2.background_posterior) << '\n';
  }
  const double err = 100.0 * static_cast<double>(wrong) / static_cast<double>(rows.size());
  OutputDir dir(output_dir(o));
  dir.write("predictions.csv", 1, csv.str());
  finish(dir, "eval-classify", c, out);
  out << "records " << rows.size() << " error_pct " << fmt(err, 8) << '\n';
}

std::vector<episodes::Episode> make_episodes(const io::RunConfig& c, const io::Dataset& ds, std::ostream& err) {
  std::vector<std::string> warnings;
  auto eps = episodes::generate_episodes(ds, c.episodes, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';
  return eps;
}

std::string episodes_text(const std::vector<episodes::Episode>& eps) {
  std::ostringstream s;
  episodes::write_episodes(s, eps);
  return s.str();
}

void cmd_gen_episodes(const Options& o, std::ostream& out, std::ostream& err) {
  const io::RunConfig c = resolve(o, io::Task::detection);
  const io::Dataset ds = io::load_dataset(require(c.data.dataset, "dataset"));
  const auto eps = make_episodes(c, ds, err);
  OutputDir dir(output_dir(o));
  dir.write("episodes.jsonl", episodes::kEpisodeSchemaVersion, episodes_text(eps));
  finish(dir, "gen-episodes", c, out);
  out << "episodes " << eps.size() << '\n';
}

void cmd_eval_episodes(const Options& o, std::ostream& out, std::ostream& err) {
  const io::RunConfig c = resolve(o, io::Task::detection);
  const head::Checkpoint ckpt = head::load_checkpoint(require(c.data.checkpoint, "checkpoint"));
  const io::Dataset ds = io::load_dataset(require(c.data.dataset, "dataset"));
  OutputDir dir(output_dir(o));
  std::vector<episodes::Episode> eps;
  if (c.data.episodes.empty()) {
    eps = make_episodes(c, ds, err);
    dir.write("episodes.jsonl", episodes::kEpisodeSchemaVersion, episodes_text(eps));
  } else {
    std::ifstream in(c.data.episodes);
    if (!in) throw InvalidArgument("cannot open episodes " + c.data.episodes);
    eps = episodes::read_episodes(in);
  }
  const auto result = episodes::run_episodes(ckpt.head, ds, eps, c.episode_eval);

  std::ostringstream csv;
  csv << "shots,episodes,foreground_queries,background_queries";
  const char* variants[] = {"", "_ft"};
  for (const char* v : variants) {
    csv << ",map" << v;
    for (std::size_t k : c.episode_eval.recall_k) csv << ",recall@" << k << v;
    csv << ",accuracy" << v << ",background_false_accept" << v;
  }
  csv << '\n';
  auto cells = [&](const std::optional<episodes::VariantReport>& v) {
    std::ostringstream s;
    if (!v) {
      s << ',';
      for (std::size_t i = 0; i < c.episode_eval.recall_k.size() + 2; ++i) s << ',';
      return s.str();
    }
    s << ',' << fmt(v->map);
    for (std::size_t k : c.episode_eval.recall_k) s << ',' << fmt(v->recall_at_k.at(k));
    s << ',' << fmt(v->accuracy) << ',' << fmt(v->background_false_accept);
    return s.str();
  };
  for (const auto& row : result.rows) {
    csv << row.shots << ',' << row.episodes << ',' << row.foreground_queries << ',' << row.background_queries
        << cells(row.plain) << cells(row.finetuned) << '\n';
  }
  dir.write("episode_report.csv", 1, csv.str());

  std::ostringstream gt;
  for (const auto& g : result.ground_truth) gt << eval::ground_truth_to_json_line(g) << '\n';
  dir.write("ground_truth.jsonl", 1, gt.str());
  auto write_dets = [&](const std::string& name, const episodes::VariantReport& v) {
    std::ostringstream s;
    for (const auto& d : v.detections) s << eval::detection_to_json_line(d) << '\n';
    dir.write(name, 1, s.str());
  };
  for (const auto& row : result.rows) {
    const std::string stem = "detections_" + std::to_string(row.shots) + "shot";
    write_dets(stem + ".jsonl", row.plain);
    if (row.finetuned) write_dets(stem + "_ft.jsonl", *row.finetuned);
  }
  finish(dir, "eval-episodes", c, out);

  out << std::fixed << std::setprecision(4);
  for (const auto& row : result.rows) {
    auto show = [&](const episodes::VariantReport& v, const char* tag) {
      out << "  " << tag << " mAP " << v.map;
      for (const auto& [k, r] : v.recall_at_k) out << " R@" << k << ' ' << r;
      out << " acc " << v.accuracy << " bg_fa " << v.background_false_accept;
    };
    out << row.shots << "-shot episodes " << row.episodes;
    show(row.plain, "plain");
    if (row.finetuned) show(*row.finetuned, "finetuned");
    out << '\n';
  }
  out << std::defaultfloat;
}

void cmd_grad_check(const Options& o, std::ostream& out) {
  const io::RunConfig c = resolve(o, io::Task::classification);
  const auto& g = c.grad_check;
  head::HeadConfig hc;
  hc.embedding.input_dim = g.input_dim;
  hc.embedding.layer_widths = g.layer_widths;
  hc.embedding.final_l2_normalize = c.head.embedding.final_l2_normalize;
  hc.mixture = c.head.mixture;
  hc.mixture.num_classes = g.classes;
  hc.mixture.modes_per_class = g.modes_per_class;
  Rng rng = Rng(c.seed).split("grad_check");
  Rng init = rng.split("init");
  head::RepMetHead model(hc, init);
  // Larger representatives than the training init keep distances away from
  // ties between modes.
  Rng reps_rng = rng.split("representatives");
  for (double& v : model.representatives().weights().value.data()) v = reps_rng.normal(0.0, 0.5);
  Rng data_rng = rng.split("batch");
  diff::Tensor x(g.batch, g.input_dim);
  for (double& v : x.data()) v = data_rng.normal();
  std::vector<head::Label> labels;
  for (std::size_t i = 0; i < g.batch; ++i) labels.push_back(head::Label::of(i % g.classes));

  model.set_mode(diff::BnMode::train);
  const auto params = model.parameters();
  const diff::GradCheckReport report = diff::finite_difference_check(
      [&](diff::Graph& graph) { return model.loss(model.forward(graph, x), labels).total; }, params, g.step);

  out << "max_relative_error " << fmt(report.max_relative_error, 6) << " checked " << report.checked
      << " nonsmooth " << report.nonsmooth << " worst " << report.worst << '\n';
  if (!(report.max_relative_error <= g.tolerance)) {
    throw Error("gradient check failed: max relative error " + fmt(report.max_relative_error, 6) + " > " +
                fmt(g.tolerance, 6) + " at " + report.worst);
  }
  OutputDir dir(output_dir(o));
  const json j = {{"schema_version", 1},
                  {"max_relative_error", report.max_relative_error},
                  {"checked", report.checked},
                  {"nonsmooth", report.nonsmooth},
                  {"worst", report.worst},
                  {"tolerance", g.tolerance}};
  dir.write("grad_check.json", 1, j.dump(2) + "\n");
  finish(dir, "grad-check", c, out);
}

void cmd_export(const Options& o, std::ostream& out) {
  const io::RunConfig c = resolve(o, io::Task::classification);
  const head::Checkpoint ckpt = head::load_checkpoint(require(c.data.checkpoint, "checkpoint"));
  const io::Dataset ds = io::load_dataset(require(c.data.dataset, "dataset"));
  std::vector<std::size_t> rows(ds.size());
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;
  const diff::Tensor emb = ckpt.head.embed(ds.features(rows));
  std::ostringstream csv;
  csv << "id,label";
  for (std::size_t k = 0; k < emb.cols(); ++k) csv << ",e" << k;
  csv << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    csv << ds.records()[r].id << ',' << ds.records()[r].label;
    for (double v : emb.row_span(r)) csv << ',' << fmt(v);
    csv << '\n';
  }
  OutputDir dir(output_dir(o));
  dir.write("embeddings.csv", 1, csv.str());
  finish(dir, "export-embeddings", c, out);
  out << "records " << rows.size() << " dim " << emb.cols() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"RepMet metric-learning head: training, few-shot episodes, evaluation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run config JSON");
    sub->add_option("--seed", o.seed, "root seed (overrides config)");
    sub->add_option("--out", o.out, std::string("output directory (default $") + kOutDirEnv + " or ./repmet_out)");
    return sub;
  };
  auto* synth = common(app.add_subcommand("synth-data", "generate a synthetic mixture-of-Gaussians dataset"));
  auto* train = common(app.add_subcommand("train", "train embedding and representatives"));
  train->add_option("--data", o.data, "dataset JSONL");
  train->add_option("--iterations", o.iterations, "training iterations");
  auto* classify = common(app.add_subcommand("eval-classify", "classification error on a split"));
  classify->add_option("--data", o.data, "dataset JSONL");
  classify->add_option("--checkpoint", o.checkpoint, "checkpoint JSON");
  auto* gen = common(app.add_subcommand("gen-episodes", "write few-shot episodes"));
  gen->add_option("--data", o.data, "dataset JSONL");
  auto* evaluate = common(app.add_subcommand("eval-episodes", "few-shot episode evaluation"));
  evaluate->add_option("--data", o.data, "dataset JSONL");
  evaluate->add_option("--checkpoint", o.checkpoint, "checkpoint JSON");
  evaluate->add_option("--episodes", o.episodes, "episode JSONL (generated when absent)");
  evaluate->add_option("--threads", o.threads, "worker threads");
  auto* grad = common(app.add_subcommand("grad-check", "finite-difference check of the loss gradient"));
  auto* exporter = common(app.add_subcommand("export-embeddings", "embedding CSV for every record"));
  exporter->add_option("--data", o.data, "dataset JSONL");
  exporter->add_option("--checkpoint", o.checkpoint, "checkpoint JSON");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (synth->parsed()) cmd_synth(o, out);
    else if (train->parsed()) cmd_train(o, out);
    else if (classify->parsed()) cmd_eval_classify(o, out);
    else if (gen->parsed()) cmd_gen_episodes(o, out, err);
    else if (evaluate->parsed()) cmd_eval_episodes(o, out, err);
    else if (grad->parsed()) cmd_grad_check(o, out);
    else if (exporter->parsed()) cmd_export(o, out);
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace repmet::cli
