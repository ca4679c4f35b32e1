#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "repmet/core/rng.hpp"
#include "repmet/diff/graph.hpp"
#include "repmet/head/embedding.hpp"
#include "repmet/head/posterior.hpp"
#include "repmet/head/representatives.hpp"

namespace repmet::head {

struct MixtureConfig {
  std::size_t num_classes = 1;
  std::size_t modes_per_class = 3;
  double sigma = 0.5;
  double margin = 0.5;
  PosteriorMode posterior = PosteriorMode::normalized;

  void validate() const;
};

struct HeadConfig {
  EmbeddingConfig embedding;
  MixtureConfig mixture;
};

/// Graph nodes of one batched head evaluation (B inputs, T modes, N classes).
struct HeadGraph {
  diff::Var embedding;        // B×e
  diff::Var representatives;  // T×e
  diff::Var sq_distances;     // B×T
  diff::Var distances;        // B×T
  diff::Var log_probs;        // B×T, −d²/2σ²
  diff::Var probs;            // B×T
  diff::Var class_max;        // B×N, max over modes
  diff::Var background;       // B×1, 1 − max over all modes
  diff::Var class_posterior;  // B×N, per the configured posterior mode
};

/// Batch means of the training losses; `total` is mean(CE + margin).
struct LossTerms {
  diff::Var total;
  diff::Var cross_entropy;
  diff::Var margin;
};

struct LossOptions {
  bool include_margin = true;
};

/// Everything the head says about one input.
struct HeadOutput {
  std::vector<double> embedding;
  ModeValues distances;
  ModeValues mode_probs;
  std::vector<double> class_posterior;
  double background_posterior = 0.0;
  std::size_t predicted_class = 0;  // argmax of class_posterior, lowest index on ties
};

/// Builds the head quantities from embeddings and representatives already in
/// `g`. Shared by training and inference.
HeadGraph head_from_embeddings(diff::Var embedding, diff::Var representatives, const ModeLayout& layout,
                               const MixtureConfig& mixture);

/// Cross-entropy and margin losses for a batch. `max` posterior mode uses the
/// background-renormalized CE; `normalized` mode rejects background labels.
LossTerms head_losses(const HeadGraph& h, std::span<const Label> labels, const ModeLayout& layout,
                      const MixtureConfig& mixture, LossOptions options = {});

/// Embedding network + representatives: the complete metric-learning head.
///
/// Copyable; a copy owns independent parameters (used for per-episode models).
class RepMetHead {
 public:
  RepMetHead() = default;
  RepMetHead(HeadConfig config, Rng& rng);
  RepMetHead(EmbeddingNet embedding, Representatives reps, MixtureConfig mixture);

  /// Training-mode graph for a batch of inputs [B×f].
  HeadGraph forward(diff::Graph& g, const diff::Tensor& inputs);
  LossTerms loss(const HeadGraph& h, std::span<const Label> labels, LossOptions options = {}) const;

  /// Eval-mode inference; never mutates the head.
  std::vector<HeadOutput> infer(const diff::Tensor& inputs) const { return infer(inputs, mixture_.posterior); }
  /// Inference with an explicit posterior mode instead of the configured one.
  std::vector<HeadOutput> infer(const diff::Tensor& inputs, PosteriorMode mode) const;
  /// Eval-mode embeddings [B×e].
  diff::Tensor embed(const diff::Tensor& inputs) const;

  void set_mode(diff::BnMode mode) { embedding_.set_mode(mode); }

  /// Swaps in new representatives (possibly a different class count and
  /// layout) and returns the previous ones for later restoration.
  Representatives install_representatives(Representatives reps);

  std::vector<diff::Parameter*> parameters();

  EmbeddingNet& embedding() noexcept { return embedding_; }
  const EmbeddingNet& embedding() const noexcept { return embedding_; }
  Representatives& representatives() noexcept { return reps_; }
  const Representatives& representatives() const noexcept { return reps_; }
  MixtureConfig& mixture() noexcept { return mixture_; }
  const MixtureConfig& mixture() const noexcept { return mixture_; }
  std::size_t num_classes() const noexcept { return reps_.layout().num_classes(); }

 private:
  EmbeddingNet embedding_;
  Representatives reps_;
  MixtureConfig mixture_;
};

}  // namespace repmet::head
