#include "repmet/head/embedding.hpp"

#include <cmath>
#include <string>

#include "repmet/core/error.hpp"
#include "repmet/diff/ops.hpp"

namespace repmet::head {

using diff::Parameter;
using diff::Tensor;
using diff::Var;

EmbeddingConfig EmbeddingConfig::classification(std::size_t input_dim) {
  return EmbeddingConfig{input_dim, {2048, 1024}, true};
}

EmbeddingConfig EmbeddingConfig::detection(std::size_t input_dim) {
  return EmbeddingConfig{input_dim, {1024, 1024, 256}, true};
}

void EmbeddingConfig::validate() const {
  if (input_dim == 0) throw InvalidArgument("embedding: input_dim must be positive");
  if (layer_widths.empty()) throw InvalidArgument("embedding: at least one layer is required");
  for (std::size_t w : layer_widths) {
    if (w == 0) throw InvalidArgument("embedding: layer widths must be positive");
  }
}

EmbeddingNet::EmbeddingNet(EmbeddingConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  std::size_t in = config_.input_dim;
  for (std::size_t l = 0; l < config_.layer_widths.size(); ++l) {
    const std::size_t out = config_.layer_widths[l];
    const bool last = l + 1 == config_.layer_widths.size();
    const double stddev = last ? std::sqrt(2.0 / static_cast<double>(in + out)) : std::sqrt(2.0 / static_cast<double>(in));
    Tensor w(in, out);
    for (auto& v : w.data()) v = rng.normal(0.0, stddev);
    const std::string prefix = "embedding." + std::to_string(l);
    Layer layer{Parameter(prefix + ".weight", std::move(w), true), Parameter(prefix + ".bias", Tensor(1, out)), std::nullopt};
    if (!last) layer.norm.emplace(prefix + ".bn", out);
    layers_.push_back(std::move(layer));
    in = out;
  }
}

Var EmbeddingNet::forward(diff::Graph& g, Var x) {
  if (x.cols() != config_.input_dim) {
    throw ShapeError("embed: input has " + std::to_string(x.cols()) + " features, expected " +
                     std::to_string(config_.input_dim));
  }
  Var h = x;
  for (auto& layer : layers_) {
    h = diff::linear(h, g.parameter(layer.weight), g.parameter(layer.bias));
    if (layer.norm) {
      layer.norm->mode = mode_;
      h = diff::relu(layer.norm->forward(h));
    }
  }
  if (!config_.final_l2_normalize) return h;
  try {
    return diff::l2_normalize(h, 1e-12);
  } catch (const DegenerateError& e) {
    throw DegenerateError(std::string("degenerate embedding: ") + e.what());
  }
}

Var EmbeddingNet::forward_frozen(diff::Graph& g, Var x) const {
  if (x.cols() != config_.input_dim) {
    throw ShapeError("embed: input has " + std::to_string(x.cols()) + " features, expected " +
                     std::to_string(config_.input_dim));
  }
  Var h = x;
  for (const auto& layer : layers_) {
    h = diff::linear(h, g.constant(layer.weight.value), g.constant(layer.bias.value));
    if (layer.norm) {
      const diff::BatchNorm& bn = *layer.norm;
      // (x − mean) · γ/√(var+ε) + β, the same arithmetic as eval-mode BatchNorm::forward
      Var centered = diff::sub(h, g.constant(bn.running_mean));
      Tensor inv_std(1, bn.features());
      for (std::size_t f = 0; f < bn.features(); ++f) inv_std(0, f) = 1.0 / std::sqrt(bn.running_var(0, f) + bn.epsilon);
      Var xhat = diff::mul(centered, g.constant(inv_std));
      h = diff::relu(diff::add(diff::mul(g.constant(bn.gamma.value), xhat), g.constant(bn.beta.value)));
    }
  }
  if (!config_.final_l2_normalize) return h;
  try {
    return diff::l2_normalize(h, 1e-12);
  } catch (const DegenerateError& e) {
    throw DegenerateError(std::string("degenerate embedding: ") + e.what());
  }
}

void EmbeddingNet::set_mode(diff::BnMode mode) {
  mode_ = mode;
  for (auto& layer : layers_) {
    if (layer.norm) layer.norm->mode = mode;
  }
}

std::vector<Parameter*> EmbeddingNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
    if (layer.norm) {
      out.push_back(&layer.norm->gamma);
      out.push_back(&layer.norm->beta);
    }
  }
  return out;
}

std::vector<Parameter*> EmbeddingNet::last_layer_parameters() {
  if (layers_.empty()) return {};
  return {&layers_.back().weight, &layers_.back().bias};
}

}  // namespace repmet::head
