#include "gapo/trainer/optimizer.hpp"

#include <cmath>

#include "gapo/errors.hpp"

namespace gapo::trainer {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "sgd") return OptimizerKind::Sgd;
  if (text == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + text + "'");
}

void Optimizer::step(diff::ParamVector& params, const diff::Gradient& gradient) {
  const auto n = params.size();
  if (gradient.values.size() != n || gradient.layout != params.layout()) {
    throw InputError("optimizer: gradient layout does not match parameters");
  }
  ++step_;
  if (config_.kind == OptimizerKind::Adam && m_.size() != n) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
  if (config_.lr == 0.0 && config_.kind == OptimizerKind::Sgd) return;

  std::vector<double> next(params.values().begin(), params.values().end());
  if (config_.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < n; ++i) next[i] -= config_.lr * gradient.values[i];
  } else {
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = gradient.values[i];
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
      if (config_.lr == 0.0) continue;
      next[i] -= config_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.eps);
    }
  }
  params.assign(next);
}

}  // namespace gapo::trainer
