#include "repmet/train/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "repmet/core/error.hpp"
#include "repmet/eval/metrics.hpp"

namespace repmet::train {

std::string to_string(BatchStyle style) {
  return style == BatchStyle::class_balanced ? "class_balanced" : "image_group";
}

BatchStyle batch_style_from_string(const std::string& s) {
  if (s == "class_balanced") return BatchStyle::class_balanced;
  if (s == "image_group") return BatchStyle::image_group;
  throw InvalidArgument("unknown batch style '" + s + "' (expected class_balanced|image_group)");
}

void TrainConfig::validate() const {
  optimizer.validate();
  if (!(optimizer.lr > 0.0)) throw InvalidArgument("train: lr must be > 0");
  if (iterations < 1) throw InvalidArgument("train: iterations must be >= 1");
  if (batch_style == BatchStyle::class_balanced) batch.validate();
  if (!(lr_gamma > 0.0)) throw InvalidArgument("train: lr_gamma must be > 0");
}

StepLoss train_step(head::RepMetHead& model, const diff::Tensor& inputs, std::span<const head::Label> labels,
                    Optimizer& optimizer, const StepContext& context, head::LossOptions options) {
  if (inputs.rows() == 0) throw InvalidArgument("train_step: empty batch");
  for (diff::Parameter* p : optimizer.parameters()) p->zero_grad();
  model.set_mode(diff::BnMode::train);

  auto diverged = [&](const std::string& cause) {
    std::ostringstream msg;
    msg << cause << " at iteration " << context.iteration << "; batch ids:";
    for (const auto& id : context.batch_ids) msg << ' ' << id;
    return DivergenceError(msg.str());
  };

  diff::Graph g;
  StepLoss out;
  out.iteration = context.iteration;
  head::LossTerms loss;
  try {
    head::HeadGraph h = model.forward(g, inputs);
    loss = model.loss(h, labels, options);
  } catch (const DegenerateError& e) {
    throw diverged(e.what());
  }
  out.cross_entropy = loss.cross_entropy.value().item();
  out.margin = loss.margin.value().item();
  out.total = loss.total.value().item();
  if (!std::isfinite(out.total)) {
    std::ostringstream cause;
    cause << "non-finite loss (ce=" << out.cross_entropy << ", margin=" << out.margin << ")";
    throw diverged(cause.str());
  }
  g.backward(loss.total);
  optimizer.step();
  return out;
}

FitResult fit(head::RepMetHead& model, const io::Dataset& dataset, const TrainingPool& pool,
              const TrainConfig& config) {
  config.validate();
  if (model.num_classes() != pool.num_classes()) {
    throw InvalidArgument("fit: model has " + std::to_string(model.num_classes()) + " classes, pool has " +
                          std::to_string(pool.num_classes()));
  }
  Rng sampler = Rng(config.seed).split("sampler");
  auto optimizer = make_optimizer(config.optimizer, model.parameters());

  std::vector<std::size_t> eval_rows;
  std::vector<head::Label> eval_labels;
  if (config.eval_every > 0) {
    for (const auto& members : pool.members) {
      for (std::size_t r : members) {
        eval_rows.push_back(r);
        eval_labels.push_back(pool.label_of(dataset, r));
      }
    }
  }

  FitResult result;
  result.trace.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    if (config.lr_step > 0 && it > 0 && it % config.lr_step == 0) {
      optimizer->set_lr(optimizer->lr() * config.lr_gamma);
    }
    const std::vector<std::size_t> rows = config.batch_style == BatchStyle::class_balanced
                                              ? sample_batch(pool, config.batch, sampler)
                                              : sample_image_batch(pool, sampler);
    std::vector<head::Label> labels;
    labels.reserve(rows.size());
    StepContext ctx;
    ctx.iteration = it;
    for (std::size_t r : rows) {
      labels.push_back(pool.label_of(dataset, r));
      ctx.batch_ids.push_back(dataset.records()[r].id);
    }
    result.trace.push_back(train_step(model, dataset.features(rows), labels, *optimizer, ctx));
    if (config.project_representatives) model.representatives().project_to_unit_sphere();

    if (config.eval_every > 0 && (it + 1) % config.eval_every == 0) {
      const double err = eval::classification_error(model, dataset.features(eval_rows), eval_labels,
                                                    model.mixture().posterior);
      result.train_error.emplace_back(it + 1, err);
    }
  }
  model.set_mode(diff::BnMode::eval);
  return result;
}

void write_loss_trace_csv(std::ostream& out, const std::vector<StepLoss>& trace) {
  out << "iteration,ce,margin,total\n";
  out << std::setprecision(17);
  for (const auto& s : trace) out << s.iteration << ',' << s.cross_entropy << ',' << s.margin << ',' << s.total << '\n';
}

}  // namespace repmet::train
