#include "repmet/head/head.hpp"

#include <cmath>

#include "repmet/core/error.hpp"
#include "repmet/diff/ops.hpp"

namespace repmet::head {

using diff::Tensor;
using diff::Var;

void MixtureConfig::validate() const {
  if (num_classes < 1) throw InvalidArgument("mixture: num_classes must be >= 1");
  if (modes_per_class < 1) throw InvalidArgument("mixture: modes_per_class must be >= 1");
  if (!(sigma > 0.0)) throw InvalidArgument("mixture: sigma must be > 0");
  if (!(margin > 0.0)) throw InvalidArgument("mixture: margin must be > 0");
}

HeadGraph head_from_embeddings(Var embedding, Var representatives, const ModeLayout& layout,
                               const MixtureConfig& mixture) {
  if (representatives.rows() != layout.total_modes()) {
    throw ShapeError("head: " + std::to_string(representatives.rows()) + " representatives for a layout of " +
                     std::to_string(layout.total_modes()) + " modes");
  }
  if (embedding.cols() != representatives.cols()) {
    throw ShapeError("head: embedding dim " + std::to_string(embedding.cols()) + " vs representative dim " +
                     std::to_string(representatives.cols()));
  }
  HeadGraph h;
  h.embedding = embedding;
  h.representatives = representatives;
  h.sq_distances = diff::pairwise_sq_dist(embedding, representatives);
  h.distances = diff::sqrt(h.sq_distances);
  h.log_probs = diff::scale(h.sq_distances, -1.0 / (2.0 * mixture.sigma * mixture.sigma));
  h.probs = diff::exp(h.log_probs);
  h.class_max = diff::reduce_max(h.probs, layout.segments()).values;
  h.background = diff::add_scalar(diff::negate(diff::reduce_max(h.probs).values), 1.0);
  if (mixture.posterior == PosteriorMode::max) {
    h.class_posterior = h.class_max;
  } else {
    // Σ_j p_ij / Σ_ij p_ij evaluated in log space so it never underflows.
    Var log_post = diff::sub(diff::logsumexp(h.log_probs, layout.segments()), diff::logsumexp(h.log_probs));
    h.class_posterior = diff::exp(log_post);
  }
  return h;
}

LossTerms head_losses(const HeadGraph& h, std::span<const Label> labels, const ModeLayout& layout,
                      const MixtureConfig& mixture, LossOptions options) {
  diff::Graph& g = h.embedding.graph();
  const std::size_t B = h.embedding.rows();
  const std::size_t N = layout.num_classes();
  if (labels.size() != B) {
    throw ShapeError("head loss: " + std::to_string(labels.size()) + " labels for a batch of " + std::to_string(B));
  }
  if (B == 0) throw InvalidArgument("head loss: empty batch");

  Tensor onehot(B, N), fg(B, 1), bg(B, 1), exclude(B, N);
  bool any_fg = false;
  for (std::size_t r = 0; r < B; ++r) {
    if (labels[r].is_background()) {
      if (mixture.posterior == PosteriorMode::normalized) {
        throw InvalidArgument("head loss: background label needs the max posterior mode");
      }
      bg(r, 0) = 1.0;
      continue;
    }
    const std::size_t c = labels[r].index();
    if (c >= N) throw InvalidArgument("head loss: label " + labels[r].str() + " out of range for " + std::to_string(N) + " classes");
    onehot(r, c) = 1.0;
    exclude(r, c) = 1e30;
    fg(r, 0) = 1.0;
    any_fg = true;
  }

  Var ce;
  if (mixture.posterior == PosteriorMode::normalized) {
    Var log_post = diff::sub(diff::logsumexp(h.log_probs, layout.segments()), diff::logsumexp(h.log_probs));
    Var log_true = diff::sum_segments(diff::mul(log_post, g.constant(onehot)));
    ce = diff::negate(diff::clamp_min(log_true, std::log(kProbabilityFloor)));
  } else {
    Var denom = diff::add(diff::sum_segments(h.class_max), h.background);
    Var numer = diff::add(diff::sum_segments(diff::mul(h.class_max, g.constant(onehot))),
                          diff::mul(h.background, g.constant(bg)));
    ce = diff::negate(diff::log(diff::clamp_min(diff::div(numer, denom), kProbabilityFloor)));
  }

  Var margin;
  if (options.include_margin && any_fg) {
    if (N < 2) throw InvalidArgument("head loss: margin loss needs at least two classes");
    Var closest = diff::reduce_min(h.distances, layout.segments()).values;  // B×N
    Var correct = diff::sum_segments(diff::mul(closest, g.constant(onehot)));
    Var wrong = diff::reduce_min(diff::add(closest, g.constant(exclude))).values;
    margin = diff::mul(diff::relu(diff::add_scalar(diff::sub(correct, wrong), mixture.margin)), g.constant(fg));
  } else {
    margin = g.constant(Tensor(B, 1));
  }

  LossTerms out;
  out.cross_entropy = diff::mean(ce);
  out.margin = diff::mean(margin);
  out.total = diff::mean(diff::add(ce, margin));
  return out;
}

RepMetHead::RepMetHead(HeadConfig config, Rng& rng) : mixture_(config.mixture) {
  config.embedding.validate();
  mixture_.validate();
  Rng embed_rng = rng.split("embedding");
  Rng rep_rng = rng.split("representatives");
  embedding_ = EmbeddingNet(config.embedding, embed_rng);
  reps_ = Representatives(ModeLayout::uniform(mixture_.num_classes, mixture_.modes_per_class),
                          config.embedding.output_dim(), rep_rng);
}

RepMetHead::RepMetHead(EmbeddingNet embedding, Representatives reps, MixtureConfig mixture)
    : embedding_(std::move(embedding)), reps_(std::move(reps)), mixture_(mixture) {
  if (reps_.dim() != embedding_.config().output_dim()) {
    throw ShapeError("RepMetHead: representative dim does not match embedding output");
  }
  mixture_.num_classes = reps_.layout().num_classes();
  mixture_.validate();
}

HeadGraph RepMetHead::forward(diff::Graph& g, const Tensor& inputs) {
  Var x = g.constant(inputs);
  Var e = embedding_.forward(g, x);
  Var r = reps_.forward(g);
  return head_from_embeddings(e, r, reps_.layout(), mixture_);
}

LossTerms RepMetHead::loss(const HeadGraph& h, std::span<const Label> labels, LossOptions options) const {
  return head_losses(h, labels, reps_.layout(), mixture_, options);
}

Tensor RepMetHead::embed(const Tensor& inputs) const {
  diff::Graph g(false);
  return embedding_.forward_frozen(g, g.constant(inputs)).value();
}

std::vector<HeadOutput> RepMetHead::infer(const Tensor& inputs, PosteriorMode mode) const {
  MixtureConfig mixture = mixture_;
  mixture.posterior = mode;
  diff::Graph g(false);
  Var e = embedding_.forward_frozen(g, g.constant(inputs));
  Var r = reps_.forward_frozen(g);
  const ModeLayout& layout = reps_.layout();
  HeadGraph h = head_from_embeddings(e, r, layout, mixture);

  std::vector<HeadOutput> out(inputs.rows());
  for (std::size_t b = 0; b < out.size(); ++b) {
    HeadOutput& o = out[b];
    const auto erow = h.embedding.value().row_span(b);
    o.embedding.assign(erow.begin(), erow.end());
    const auto drow = h.distances.value().row_span(b);
    o.distances = ModeValues(layout, {drow.begin(), drow.end()});
    const auto prow = h.probs.value().row_span(b);
    o.mode_probs = ModeValues(layout, {prow.begin(), prow.end()});
    const auto crow = h.class_posterior.value().row_span(b);
    o.class_posterior.assign(crow.begin(), crow.end());
    o.background_posterior = h.background.value()(b, 0);
    for (std::size_t i = 1; i < o.class_posterior.size(); ++i) {
      if (o.class_posterior[i] > o.class_posterior[o.predicted_class]) o.predicted_class = i;
    }
  }
  return out;
}

Representatives RepMetHead::install_representatives(Representatives reps) {
  if (reps.dim() != embedding_.config().output_dim()) {
    throw ShapeError("install_representatives: dim " + std::to_string(reps.dim()) + " vs embedding " +
                     std::to_string(embedding_.config().output_dim()));
  }
  Representatives previous = std::move(reps_);
  reps_ = std::move(reps);
  mixture_.num_classes = reps_.layout().num_classes();
  return previous;
}

std::vector<diff::Parameter*> RepMetHead::parameters() {
  std::vector<diff::Parameter*> out = embedding_.parameters();
  out.push_back(&reps_.weights());
  return out;
}

}  // namespace repmet::head
