#include "tdce/diffcore/optimizer.hpp"

#include <cmath>

#include "tdce/common/error.hpp"

namespace tdce::diff {

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ValidationError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(const ParamSet& params, OptimizerConfig config)
    : config_(config), mask_(params.trainable_mask()) {
  if (!(config_.lr > 0.0)) throw ValidationError("optimizer: learning rate must be positive");
  if (config_.kind == OptimizerKind::adam) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape(), 0.0);
      v_.emplace_back(p.value.shape(), 0.0);
    }
  }
}

void Optimizer::step(ParamSet& params, const Gradients& grads) {
  if (params.trainable_mask() != mask_)
    throw ValidationError("optimizer: trainable flags changed during the run");
  if (grads.size() != params.size())
    throw ValidationError("optimizer: gradients cover " + std::to_string(grads.size()) + " of " +
                          std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask_[i]) continue;
    if (grads[i].shape() != params[i].value.shape())
      throw ValidationError("optimizer: missing or mis-shaped gradient for trainable parameter " + params[i].name);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask_[i]) continue;
    auto& w = params[i].value.storage();
    const auto& g = grads[i].storage();
    if (config_.kind == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= config_.lr * (g[k] + config_.weight_decay * w[k]);
      continue;
    }
    auto& m = m_[i].storage();
    auto& v = v_[i].storage();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] + config_.weight_decay * w[k];
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * gk;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace tdce::diff
