#include "gapo/objectives/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "gapo/errors.hpp"
#include "gapo/util/format.hpp"

namespace gapo::objectives {

using diff::Tape;
using diff::Tensor;
using diff::Var;

void validate_pair(const PreferencePair& pair) {
  if (pair.y_w.empty() || pair.y_l.empty()) {
    throw InputError("pair " + std::to_string(pair.pair_id) + " has an empty response");
  }
  if (pair.y_w == pair.y_l) {
    throw InputError("pair " + std::to_string(pair.pair_id) + " has identical responses");
  }
}

PreferencePair swapped(const PreferencePair& pair) {
  PreferencePair out = pair;
  std::swap(out.y_w, out.y_l);
  out.true_label_swapped = !pair.true_label_swapped;
  return out;
}

std::string to_string(Strategy s) { return s == Strategy::Batch ? "batch" : "instance"; }

Strategy parse_strategy(const std::string& text) {
  if (text == "batch") return Strategy::Batch;
  if (text == "instance") return Strategy::Instance;
  throw ConfigError("unknown perturbation strategy '" + text + "'");
}

std::string to_string(Direction d) { return d == Direction::Descent ? "descent" : "ascent"; }

Direction parse_direction(const std::string& text) {
  if (text == "descent") return Direction::Descent;
  if (text == "ascent") return Direction::Ascent;
  throw ConfigError("unknown perturbation direction '" + text + "'");
}

void validate(const GapoConfig& cfg) {
  if (!(cfg.beta > 0)) throw ConfigError("beta must be positive");
  if (!(cfg.gamma >= 0)) throw ConfigError("gamma must be non-negative");
  if (!(cfg.rho >= 0)) throw ConfigError("rho must be non-negative");
}

namespace {

void require_batch(std::span<const PreferencePair> batch, const char* op) {
  if (batch.empty()) throw InputError(std::string(op) + ": empty batch");
}

// Interleaved [w0, l0, w1, l1, ...] requests.
std::vector<policy::SeqRef> pair_requests(std::span<const PreferencePair> batch) {
  std::vector<policy::SeqRef> refs;
  refs.reserve(batch.size() * 2);
  for (const auto& p : batch) {
    refs.push_back({&p.x, &p.y_w});
    refs.push_back({&p.x, &p.y_l});
  }
  return refs;
}

std::pair<std::vector<int>, std::vector<int>> even_odd(std::size_t n) {
  std::vector<int> even(n), odd(n);
  for (std::size_t i = 0; i < n; ++i) {
    even[i] = static_cast<int>(2 * i);
    odd[i] = static_cast<int>(2 * i + 1);
  }
  return {even, odd};
}

// Unnormalized sequence log-probs, (2N x 1) interleaved.
Var pair_log_probs(const PolicyModel& model, Tape& tape, Var theta,
                   std::span<const PreferencePair> batch) {
  const auto refs = pair_requests(batch);
  return model.sequence_log_probs(tape, theta, refs);
}

Var column_constant(Tape& tape, std::span<const double> v) { return tape.constant(Tensor::column(v)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Perturbation make_perturbation(const PolicyModel& model, std::span<const PreferencePair> batch,
                               double rho, const diff::ScopeMask& scope, Direction direction) {
  require_batch(batch, "perturbation");
  if (!(rho >= 0)) throw InputError("perturbation radius must be non-negative");
  const auto mask = scope.resolve(model.params().layout());
  Perturbation out;
  out.epsilon.assign(model.params().size(), 0.0);
  auto g = diff::grad_values(mean_margin_objective(model, batch), model.params().values());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
  out.gradient_norm = diff::l2_norm(g);
  if (rho == 0.0) return out;
  if (out.gradient_norm <= kDegenerateNorm) {
    out.degenerate = true;
    return out;
  }
  const double step = direction == Direction::Descent ? -rho : rho;
  for (std::size_t i = 0; i < g.size(); ++i) out.epsilon[i] = step * g[i] / out.gradient_norm;
  return out;
}

std::vector<double> add(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace

Var margins(const PolicyModel& model, Tape& tape, Var theta, std::span<const PreferencePair> batch) {
  require_batch(batch, "margins");
  Var lp = pair_log_probs(model, tape, theta, batch);
  std::vector<double> inv_len;
  inv_len.reserve(batch.size() * 2);
  for (const auto& p : batch) {
    inv_len.push_back(1.0 / static_cast<double>(p.y_w.size()));
    inv_len.push_back(1.0 / static_cast<double>(p.y_l.size()));
  }
  Var rewards = diff::mul(lp, column_constant(tape, inv_len));
  auto [even, odd] = even_odd(batch.size());
  return diff::sub(diff::gather_rows(rewards, std::move(even)), diff::gather_rows(rewards, std::move(odd)));
}

diff::Objective mean_margin_objective(const PolicyModel& model, std::span<const PreferencePair> batch) {
  return [&model, batch](Tape& tape, Var theta) { return diff::mean(margins(model, tape, theta, batch)); };
}

diff::Objective gapo_objective(const PolicyModel& model, std::span<const PreferencePair> batch,
                               std::span<const double> anchor_margins, double beta, double gamma) {
  if (anchor_margins.size() != batch.size()) throw InputError("gapo_objective: one anchor per pair");
  return [&model, batch, anchor_margins, beta, gamma](Tape& tape, Var theta) {
    // The anchor enters as a constant node: no gradient flows through it.
    Var gap = diff::sub(margins(model, tape, theta, batch), column_constant(tape, anchor_margins));
    Var z = diff::add_scalar(diff::scale(gap, beta), -gamma);
    return diff::scale(diff::mean(diff::log_sigmoid(z)), -1.0);
  };
}

diff::Objective simpo_objective(const PolicyModel& model, std::span<const PreferencePair> batch,
                                double beta, double gamma) {
  return [&model, batch, beta, gamma](Tape& tape, Var theta) {
    Var z = diff::add_scalar(diff::scale(margins(model, tape, theta, batch), beta), -gamma);
    return diff::scale(diff::mean(diff::log_sigmoid(z)), -1.0);
  };
}

diff::Objective dpo_objective(const PolicyModel& model, const ReferenceModel& reference,
                              std::span<const PreferencePair> batch, double beta) {
  require_batch(batch, "dpo");
  if (reference.model().params().layout() != model.params().layout()) {
    throw InputError("dpo: reference is not layout-compatible with the policy");
  }
  // h_ref = (log π_ref(y_w) − log π_ref(y_l)) per pair, frozen.
  std::vector<double> ref_diff(batch.size());
  {
    Tape tape(false);
    Var theta = tape.variable(Tensor::column(reference.model().params().values()));
    const auto& lp = pair_log_probs(reference.model(), tape, theta, batch).value();
    for (std::size_t i = 0; i < batch.size(); ++i) ref_diff[i] = lp.data[2 * i] - lp.data[2 * i + 1];
  }
  return [&model, batch, beta, ref_diff = std::move(ref_diff)](Tape& tape, Var theta) {
    Var lp = pair_log_probs(model, tape, theta, batch);
    auto [even, odd] = even_odd(batch.size());
    Var policy_diff = diff::sub(diff::gather_rows(lp, std::move(even)), diff::gather_rows(lp, std::move(odd)));
    Var h = diff::sub(policy_diff, column_constant(tape, ref_diff));
    return diff::scale(diff::mean(diff::log_sigmoid(diff::scale(h, beta))), -1.0);
  };
}

double margin(const PolicyModel& model, const PreferencePair& pair) {
  return margin_values(model, std::span<const PreferencePair>(&pair, 1)).front();
}

std::vector<double> margin_values(const PolicyModel& model, std::span<const PreferencePair> batch) {
  Tape tape(false);
  Var theta = tape.variable(Tensor::column(model.params().values()));
  return margins(model, tape, theta, batch).value().data;
}

Perturbation batch_perturbation(const PolicyModel& model, std::span<const PreferencePair> batch,
                                double rho, const diff::ScopeMask& scope, Direction direction) {
  return make_perturbation(model, batch, rho, scope, direction);
}

Perturbation instance_perturbation(const PolicyModel& model, const PreferencePair& pair, double rho,
                                   const diff::ScopeMask& scope, Direction direction) {
  return make_perturbation(model, std::span<const PreferencePair>(&pair, 1), rho, scope, direction);
}

std::vector<AnchorRecord> anchor_records(PolicyModel& model, std::span<const PreferencePair> batch,
                                         const GapoConfig& cfg) {
  require_batch(batch, "anchor_records");
  validate(cfg);
  const auto current = margin_values(model, batch);
  std::vector<double> anchor(batch.size());

  const diff::ParamVector saved = model.params();
  auto restore = [&] {
    model.params().assign(saved.values());
    if (!model.params().bit_identical(saved)) {
      throw RestoreError("parameters differ from their saved copy after anchor evaluation");
    }
  };

  try {
    if (cfg.strategy == Strategy::Batch) {
      const auto eps = batch_perturbation(model, batch, cfg.rho, cfg.scope, cfg.direction);
      model.params().assign(add(saved.values(), eps.epsilon));
      anchor = margin_values(model, batch);
      restore();
    } else {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto eps = instance_perturbation(model, batch[i], cfg.rho, cfg.scope, cfg.direction);
        model.params().assign(add(saved.values(), eps.epsilon));
        anchor[i] = margin(model, batch[i]);
        restore();
      }
    }
  } catch (const RestoreError&) {
    throw;
  } catch (...) {
    model.params().assign(saved.values());
    throw;
  }

  std::vector<double> gaps(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) gaps[i] = current[i] - anchor[i];
  const auto weights = gapo_weights(gaps, cfg.beta, cfg.gamma);
  std::vector<AnchorRecord> records(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    records[i] = {batch[i].pair_id, current[i], anchor[i], gaps[i], weights[i]};
  }
  return records;
}

std::vector<double> gapo_weights(std::span<const double> gaps, double beta, double gamma) {
  if (!(beta > 0)) throw InputError("gapo_weights: beta must be positive");
  std::vector<double> out(gaps.size());
  for (std::size_t i = 0; i < gaps.size(); ++i) out[i] = beta * sigmoid(gamma - beta * gaps[i]);
  return out;
}

GapoLoss gapo_loss(PolicyModel& model, std::span<const PreferencePair> batch, const GapoConfig& cfg) {
  GapoLoss out;
  out.records = anchor_records(model, batch, cfg);
  std::vector<double> anchors(out.records.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) anchors[i] = out.records[i].anchor_margin;
  auto vg = diff::value_and_grad(gapo_objective(model, batch, anchors, cfg.beta, cfg.gamma), model.params());
  out.loss = vg.value;
  out.gradient = std::move(vg.gradient);
  return out;
}

double gapo_loss_value(const PolicyModel& model, std::span<const PreferencePair> batch,
                       std::span<const double> anchor_margins, double beta, double gamma) {
  return diff::evaluate(gapo_objective(model, batch, anchor_margins, beta, gamma), model.params());
}

double dpo_loss(const PolicyModel& model, const ReferenceModel& reference,
                std::span<const PreferencePair> batch, double beta) {
  return diff::evaluate(dpo_objective(model, reference, batch, beta), model.params());
}

double simpo_loss(const PolicyModel& model, std::span<const PreferencePair> batch, double beta,
                  double gamma) {
  if (!(beta > 0)) throw InputError("simpo_loss: beta must be positive");
  return diff::evaluate(simpo_objective(model, batch, beta, gamma), model.params());
}

void write_anchor_csv(std::ostream& out, std::span<const AnchorRecord> records) {
  out << "pair_id,margin,anchor_margin,gap,weight\n";
  for (const auto& r : records) {
    out << r.pair_id << ',' << util::format_double(r.margin) << ','
        << util::format_double(r.anchor_margin) << ',' << util::format_double(r.gap) << ','
        << util::format_double(r.weight) << '\n';
  }
}

}  // namespace gapo::objectives
