#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "repmet/episodes/episodes.hpp"
#include "repmet/episodes/runner.hpp"
#include "repmet/head/head.hpp"
#include "repmet/io/synth.hpp"
#include "repmet/train/trainer.hpp"

namespace repmet::io {

inline constexpr int kRunConfigSchemaVersion = 1;

enum class Task { classification, detection };

std::string to_string(Task task);
Task task_from_string(const std::string& s);

struct DataPaths {
  std::string dataset;
  std::string checkpoint;
  std::string episodes;
};

/// Settings of the grad-check command: a small random head and batch.
struct GradCheckConfig {
  std::size_t classes = 4;
  std::size_t modes_per_class = 2;
  std::size_t input_dim = 16;
  std::vector<std::size_t> layer_widths{16, 8};
  std::size_t batch = 8;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct EvalConfig {
  std::string split = "test";
};

/// Every knob of every command in one declarative document. Task presets
/// fill the defaults (K, widths, posterior form, batch style); keys given in
/// the document override them.
struct RunConfig {
  Task task = Task::classification;
  std::uint64_t seed = 0;
  DataPaths data;
  head::HeadConfig head;
  train::TrainConfig trainer;
  std::string train_split = "train";
  episodes::EpisodeSpec episodes;
  episodes::EpisodeEvalConfig episode_eval;
  EvalConfig eval;
  GradCheckConfig grad_check;
  SynthConfig synth;

  static RunConfig preset(Task task);
  /// Propagates the root seed into the subsystem configs.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& c);
/// Unknown keys anywhere are rejected with their dotted path.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace repmet::io
