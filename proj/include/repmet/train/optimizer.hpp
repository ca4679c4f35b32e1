#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "repmet/diff/graph.hpp"

namespace repmet::train {

struct OptimizerConfig {
  enum class Kind { sgd, adam };
  Kind kind = Kind::sgd;
  double lr = 0.01;
  double momentum = 0.9;  // sgd
  double weight_decay = 0.0;
  double beta1 = 0.9;  // adam
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

std::string to_string(OptimizerConfig::Kind kind);
OptimizerConfig::Kind optimizer_kind_from_string(const std::string& s);

/// Updates a fixed list of parameters from their accumulated gradients.
/// Weight decay touches only parameters flagged `decay`; non-trainable
/// parameters are skipped.
class Optimizer {
 public:
  explicit Optimizer(std::vector<diff::Parameter*> params) : params_(std::move(params)) {}
  virtual ~Optimizer() = default;

  virtual void step() = 0;

  double lr() const noexcept { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<diff::Parameter*>& parameters() const noexcept { return params_; }

 protected:
  std::vector<diff::Parameter*> params_;
  double lr_ = 0.0;
};

/// v ← μ·v + (g + λ·w);  w ← w − lr·v
class Sgd final : public Optimizer {
 public:
  Sgd(std::vector<diff::Parameter*> params, double lr, double momentum, double weight_decay);
  void step() override;

 private:
  double momentum_;
  double weight_decay_;
  std::vector<diff::Tensor> velocity_;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<diff::Parameter*> params, double lr, double beta1, double beta2, double epsilon,
       double weight_decay);
  void step() override;

 private:
  double beta1_, beta2_, epsilon_, weight_decay_;
  long step_count_ = 0;
  std::vector<diff::Tensor> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config, std::vector<diff::Parameter*> params);

}  // namespace repmet::train
