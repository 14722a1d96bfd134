#pragma once

#include <string>
#include <vector>

#include "gapo/diff/param_vector.hpp"

namespace gapo::trainer {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// SGD or Adam state; moments are sized lazily to the first parameter vector.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  const OptimizerConfig& config() const noexcept { return config_; }
  long steps() const noexcept { return step_; }
  const std::vector<double>& first_moment() const noexcept { return m_; }
  const std::vector<double>& second_moment() const noexcept { return v_; }

  // Descends along `gradient`. With lr == 0 the parameters are left untouched.
  void step(diff::ParamVector& params, const diff::Gradient& gradient);

 private:
  OptimizerConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  long step_ = 0;
};

}  // namespace gapo::trainer
