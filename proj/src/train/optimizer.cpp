#include "repmet/train/optimizer.hpp"

#include <cmath>

#include "repmet/core/error.hpp"

namespace repmet::train {

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0)) throw InvalidArgument("optimizer: lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("optimizer: momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("optimizer: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("optimizer: betas must lie in [0,1)");
  if (!(epsilon > 0.0)) throw InvalidArgument("optimizer: epsilon must be > 0");
}

std::string to_string(OptimizerConfig::Kind kind) { return kind == OptimizerConfig::Kind::sgd ? "sgd" : "adam"; }

OptimizerConfig::Kind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerConfig::Kind::sgd;
  if (s == "adam") return OptimizerConfig::Kind::adam;
  throw InvalidArgument("unknown optimizer '" + s + "' (expected sgd|adam)");
}

Sgd::Sgd(std::vector<diff::Parameter*> params, double lr, double momentum, double weight_decay)
    : Optimizer(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  lr_ = lr;
  for (auto* p : params_) velocity_.emplace_back(p->value.rows(), p->value.cols());
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    diff::Parameter& p = *params_[i];
    if (!p.trainable) continue;
    const double decay = p.decay ? weight_decay_ : 0.0;
    auto w = p.value.data();
    auto g = p.grad.data();
    auto v = velocity_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = momentum_ * v[k] + (g[k] + decay * w[k]);
      w[k] -= lr_ * v[k];
    }
  }
}

Adam::Adam(std::vector<diff::Parameter*> params, double lr, double beta1, double beta2, double epsilon,
           double weight_decay)
    : Optimizer(std::move(params)), beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay) {
  lr_ = lr;
  for (auto* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void Adam::step() {
  ++step_count_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    diff::Parameter& p = *params_[i];
    if (!p.trainable) continue;
    const double decay = p.decay ? weight_decay_ : 0.0;
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double grad = g[k] + decay * w[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * grad;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * grad * grad;
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + epsilon_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config, std::vector<diff::Parameter*> params) {
  config.validate();
  if (config.kind == OptimizerConfig::Kind::sgd) {
    return std::make_unique<Sgd>(std::move(params), config.lr, config.momentum, config.weight_decay);
  }
  return std::make_unique<Adam>(std::move(params), config.lr, config.beta1, config.beta2, config.epsilon,
                                config.weight_decay);
}

}  // namespace repmet::train
