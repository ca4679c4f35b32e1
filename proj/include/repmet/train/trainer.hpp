#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "repmet/head/head.hpp"
#include "repmet/io/dataset.hpp"
#include "repmet/train/optimizer.hpp"
#include "repmet/train/sampler.hpp"

namespace repmet::train {

enum class BatchStyle {
  class_balanced,  // M classes × D instances (+ background)
  image_group,     // all ROIs of one image, fg and bg mixed
};

std::string to_string(BatchStyle style);
BatchStyle batch_style_from_string(const std::string& s);

struct TrainConfig {
  OptimizerConfig optimizer;
  BatchSpec batch;
  BatchStyle batch_style = BatchStyle::class_balanced;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  /// Training-set classification error every N iterations (0 = never).
  std::size_t eval_every = 0;
  /// Multiply lr by lr_gamma every lr_step iterations (0 = constant lr).
  std::size_t lr_step = 0;
  double lr_gamma = 0.1;
  /// Rescale representatives to unit norm after every update. Off by
  /// default; see README on representative drift under the normalized posterior.
  bool project_representatives = false;

  void validate() const;
};

struct StepLoss {
  std::size_t iteration = 0;
  double cross_entropy = 0.0;
  double margin = 0.0;
  double total = 0.0;

  bool operator==(const StepLoss&) const = default;
};

struct FitResult {
  std::vector<StepLoss> trace;
  /// (iteration, training error %) at each evaluation point.
  std::vector<std::pair<std::size_t, double>> train_error;
};

/// Diagnostic context for error messages.
struct StepContext {
  std::size_t iteration = 0;
  std::vector<std::string> batch_ids;
};

/// One optimization step in train mode: forward, backward, update. Returns the
/// pre-update loss. Throws DivergenceError (with iteration and batch ids) when
/// the loss is not finite; parameters are left untouched in that case.
StepLoss train_step(head::RepMetHead& model, const diff::Tensor& inputs, std::span<const head::Label> labels,
                    Optimizer& optimizer, const StepContext& context = {}, head::LossOptions options = {});

/// Joint training of embedding and representatives on `pool`. The model
/// must have one class per pool class. Fully determined by config.seed.
FitResult fit(head::RepMetHead& model, const io::Dataset& dataset, const TrainingPool& pool,
              const TrainConfig& config);

/// CSV with header iteration,ce,margin,total.
void write_loss_trace_csv(std::ostream& out, const std::vector<StepLoss>& trace);

}  // namespace repmet::train
