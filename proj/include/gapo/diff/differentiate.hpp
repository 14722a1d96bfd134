#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gapo/diff/param_vector.hpp"
#include "gapo/diff/tape.hpp"

namespace gapo::diff {

// A scalar function of the flat parameter vector, expressed on a Tape.
// `theta` is an (n x 1) node holding the parameters; the objective must
// return a 1x1 node recorded on the same tape.
using Objective = std::function<Var(Tape&, Var theta)>;

struct ValueAndGradient {
  double value = 0.0;
  Gradient gradient;
};

double evaluate(const Objective& f, const ParamVector& theta);
double evaluate(const Objective& f, std::span<const double> theta);

Gradient grad(const Objective& f, const ParamVector& theta);
ValueAndGradient value_and_grad(const Objective& f, const ParamVector& theta);
std::vector<double> grad_values(const Objective& f, std::span<const double> theta);

// Central differences, entry k = (f(θ + h e_k) − f(θ − h e_k)) / 2h.
Gradient finite_diff_grad(const Objective& f, const ParamVector& theta, double h);

enum class HvpMode { CentralDifferenceOfGradients };

struct HvpOptions {
  HvpMode mode = HvpMode::CentralDifferenceOfGradients;
  // Step is step_scale * (1 + ||θ||) along the unit direction of v.
  double step_scale = 1e-4;
};

struct HvpResult {
  std::vector<double> values;
  HvpMode mode = HvpMode::CentralDifferenceOfGradients;
  double step = 0.0;
};

std::string to_string(HvpMode mode);

// ∇²f(θ)·v.
HvpResult hvp(const Objective& f, const ParamVector& theta, std::span<const double> v,
              const HvpOptions& options = {});
HvpResult hvp(const Objective& f, std::span<const double> theta, std::span<const double> v,
              const HvpOptions& options = {});

// Max-norm relative error ||a − b||∞ / max(||a||∞, ||b||∞, floor).
double max_rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-300);

}  // namespace gapo::diff
