#include "gapo/diff/differentiate.hpp"

#include <algorithm>
#include <cmath>

#include "gapo/errors.hpp"

namespace gapo::diff {

namespace {

Var run(const Objective& f, Tape& tape, std::span<const double> theta, Var& theta_var) {
  theta_var = tape.variable(Tensor::column(theta));
  Var out = f(tape, theta_var);
  if (!out.valid() || out.tape != &tape) {
    throw InputError("objective result was not built on the differentiation tape");
  }
  if (out.rows() != 1 || out.cols() != 1) throw InputError("objective must return a scalar");
  return out;
}

void require_finite(double v, const char* where) {
  if (!std::isfinite(v)) throw NumericError(where, std::string(where) + ": non-finite objective value");
}

}  // namespace

double evaluate(const Objective& f, std::span<const double> theta) {
  Tape tape(false);
  Var theta_var;
  const double v = run(f, tape, theta, theta_var).item();
  require_finite(v, "evaluate");
  return v;
}

double evaluate(const Objective& f, const ParamVector& theta) { return evaluate(f, theta.values()); }

std::vector<double> grad_values(const Objective& f, std::span<const double> theta) {
  Tape tape(true);
  Var theta_var;
  Var out = run(f, tape, theta, theta_var);
  tape.backward(out);
  return tape.grad(theta_var).data;
}

ValueAndGradient value_and_grad(const Objective& f, const ParamVector& theta) {
  Tape tape(true);
  Var theta_var;
  Var out = run(f, tape, theta.values(), theta_var);
  tape.backward(out);
  return {out.item(), Gradient{tape.grad(theta_var).data, theta.layout()}};
}

Gradient grad(const Objective& f, const ParamVector& theta) {
  return value_and_grad(f, theta).gradient;
}

Gradient finite_diff_grad(const Objective& f, const ParamVector& theta, double h) {
  if (!(h > 0)) throw InputError("finite_diff_grad: step must be positive");
  std::vector<double> probe(theta.values().begin(), theta.values().end());
  std::vector<double> out(probe.size());
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const double saved = probe[k];
    probe[k] = saved + h;
    const double fp = evaluate(f, probe);
    probe[k] = saved - h;
    const double fm = evaluate(f, probe);
    probe[k] = saved;
    out[k] = (fp - fm) / (2.0 * h);
  }
  return Gradient{std::move(out), theta.layout()};
}

std::string to_string(HvpMode mode) {
  switch (mode) {
    case HvpMode::CentralDifferenceOfGradients:
      return "central-difference-of-gradients";
  }
  return "unknown";
}

HvpResult hvp(const Objective& f, std::span<const double> theta, std::span<const double> v,
              const HvpOptions& options) {
  if (v.size() != theta.size()) throw InputError("hvp: direction has the wrong length");
  const double vnorm = l2_norm(v);
  if (!std::isfinite(vnorm)) throw NumericError("hvp", "hvp: direction is not finite");
  HvpResult result;
  result.mode = options.mode;
  result.values.assign(theta.size(), 0.0);
  if (vnorm == 0.0) return result;

  const double h = options.step_scale * (1.0 + l2_norm(theta));
  result.step = h;
  std::vector<double> plus(theta.begin(), theta.end());
  std::vector<double> minus(theta.begin(), theta.end());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double step = h * v[i] / vnorm;
    plus[i] += step;
    minus[i] -= step;
  }
  const auto gp = grad_values(f, plus);
  const auto gm = grad_values(f, minus);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    result.values[i] = (gp[i] - gm[i]) / (2.0 * h) * vnorm;
  }
  return result;
}

HvpResult hvp(const Objective& f, const ParamVector& theta, std::span<const double> v,
              const HvpOptions& options) {
  return hvp(f, theta.values(), v, options);
}

double max_rel_error(std::span<const double> a, std::span<const double> b, double floor) {
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

}  // namespace gapo::diff
