#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "repmet/core/rng.hpp"
#include "repmet/diff/batch_norm.hpp"
#include "repmet/diff/graph.hpp"

namespace repmet::head {

/// Stack of FC layers: every layer but the last is followed by batch norm and
/// ReLU; the last is linear and optionally followed by L2 normalization.
struct EmbeddingConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> layer_widths{2048, 1024};
  bool final_l2_normalize = true;

  /// Two layers, 2048 and 1024.
  static EmbeddingConfig classification(std::size_t input_dim);
  /// Two 1024 layers and a final 256 layer.
  static EmbeddingConfig detection(std::size_t input_dim);

  std::size_t output_dim() const { return layer_widths.empty() ? 0 : layer_widths.back(); }
  void validate() const;
};

class EmbeddingNet {
 public:
  struct Layer {
    diff::Parameter weight;  // [in × out]
    diff::Parameter bias;    // [1 × out]
    std::optional<diff::BatchNorm> norm;
  };

  EmbeddingNet() = default;
  /// He-normal weights for hidden layers, Glorot-normal for the last, zero biases.
  EmbeddingNet(EmbeddingConfig config, Rng& rng);

  /// Forward through the graph with gradients to every parameter. Batch norm
  /// follows `mode()` and advances running statistics in train mode.
  diff::Var forward(diff::Graph& g, diff::Var x);
  /// Eval-mode forward with parameters as constants; never mutates state.
  diff::Var forward_frozen(diff::Graph& g, diff::Var x) const;

  void set_mode(diff::BnMode mode);
  diff::BnMode mode() const noexcept { return mode_; }

  std::vector<diff::Parameter*> parameters();
  /// Weight and bias of the final FC layer.
  std::vector<diff::Parameter*> last_layer_parameters();

  const EmbeddingConfig& config() const noexcept { return config_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

 private:
  EmbeddingConfig config_;
  std::vector<Layer> layers_;
  diff::BnMode mode_ = diff::BnMode::train;
};

}  // namespace repmet::head
