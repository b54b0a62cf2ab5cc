#pragma once

#include <string>
#include <vector>

#include "tdce/diffcore/param_set.hpp"

namespace tdce::diff {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

OptimizerKind parse_optimizer_kind(const std::string& s);
std::string to_string(OptimizerKind k);

// Updates trainable parameters only. The trainable mask is captured at
// construction; a step after the mask changed is rejected.
class Optimizer {
 public:
  Optimizer(const ParamSet& params, OptimizerConfig config);

  void step(ParamSet& params, const Gradients& grads);
  long steps_taken() const noexcept { return t_; }
  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<bool> mask_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace tdce::diff
