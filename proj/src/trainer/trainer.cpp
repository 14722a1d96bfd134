#include "gapo/trainer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "gapo/errors.hpp"
#include "gapo/policy/checkpoint.hpp"
#include "gapo/util/format.hpp"
#include "gapo/util/rng.hpp"

namespace gapo::trainer {

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::Gapo: return "gapo";
    case ObjectiveKind::Dpo: return "dpo";
    case ObjectiveKind::Simpo: return "simpo";
    case ObjectiveKind::SimpoSam: return "simpo_sam";
  }
  return "unknown";
}

ObjectiveKind parse_objective(const std::string& text) {
  if (text == "gapo") return ObjectiveKind::Gapo;
  if (text == "dpo") return ObjectiveKind::Dpo;
  if (text == "simpo") return ObjectiveKind::Simpo;
  if (text == "simpo_sam") return ObjectiveKind::SimpoSam;
  throw ConfigError("unknown method '" + text + "'");
}

namespace {

struct Evaluated {
  double loss = 0.0;
  diff::Gradient gradient;
  double mean_margin = 0.0;
  double mean_gap = 0.0;
  double mean_weight = 0.0;
};

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Evaluated evaluate_simpo(const PolicyModel& model, std::span<const PreferencePair> batch,
                         const GapoConfig& cfg) {
  Evaluated ev;
  auto vg = diff::value_and_grad(objectives::simpo_objective(model, batch, cfg.beta, cfg.gamma),
                                 model.params());
  ev.loss = vg.value;
  ev.gradient = std::move(vg.gradient);
  const auto m = objectives::margin_values(model, batch);
  ev.mean_margin = mean_of(m);
  double w = 0.0;
  for (double mi : m) w += cfg.beta * sigmoid(cfg.gamma - cfg.beta * mi);
  ev.mean_weight = w / static_cast<double>(m.size());
  return ev;
}

Evaluated evaluate_dpo(const PolicyModel& model, std::span<const PreferencePair> batch,
                       const StepContext& ctx) {
  if (ctx.reference == nullptr) throw ConfigError("dpo needs a reference model");
  Evaluated ev;
  const double beta = ctx.cfg.beta;
  auto vg = diff::value_and_grad(objectives::dpo_objective(model, *ctx.reference, batch, beta),
                                 model.params());
  ev.loss = vg.value;
  ev.gradient = std::move(vg.gradient);
  const auto m = objectives::margin_values(model, batch);
  ev.mean_margin = mean_of(m);
  double w = 0.0;
  for (const auto& p : batch) {
    const double h = (model.log_prob(p.x, p.y_w) - ctx.reference->model().log_prob(p.x, p.y_w)) -
                     (model.log_prob(p.x, p.y_l) - ctx.reference->model().log_prob(p.x, p.y_l));
    w += beta * sigmoid(-beta * h);
  }
  ev.mean_weight = w / static_cast<double>(batch.size());
  return ev;
}

Evaluated evaluate_gapo(PolicyModel& model, std::span<const PreferencePair> batch, const GapoConfig& cfg) {
  Evaluated ev;
  auto gl = objectives::gapo_loss(model, batch, cfg);
  ev.loss = gl.loss;
  ev.gradient = std::move(gl.gradient);
  double m = 0.0, g = 0.0, w = 0.0;
  for (const auto& r : gl.records) {
    m += r.margin;
    g += r.gap;
    w += r.weight;
  }
  const auto n = static_cast<double>(gl.records.size());
  ev.mean_margin = m / n;
  ev.mean_gap = g / n;
  ev.mean_weight = w / n;
  return ev;
}

// SAM: gradient of the SimPO loss at θ + ρ ∇L/||∇L||; parameters restored by copy-back.
Evaluated evaluate_sam(PolicyModel& model, std::span<const PreferencePair> batch, double rho,
                       const GapoConfig& cfg) {
  if (!(rho >= 0)) throw ConfigError("SAM radius must be non-negative");
  Evaluated at_theta = evaluate_simpo(model, batch, cfg);
  const double norm = diff::l2_norm(at_theta.gradient.values);
  if (rho == 0.0 || norm <= objectives::kDegenerateNorm) return at_theta;

  const diff::ParamVector saved = model.params();
  std::vector<double> ascended(saved.values().begin(), saved.values().end());
  for (std::size_t i = 0; i < ascended.size(); ++i) ascended[i] += rho * at_theta.gradient.values[i] / norm;
  diff::Gradient sharp;
  try {
    model.params().assign(ascended);
    sharp = diff::grad(objectives::simpo_objective(model, batch, cfg.beta, cfg.gamma), model.params());
  } catch (...) {
    model.params().assign(saved.values());
    throw;
  }
  model.params().assign(saved.values());
  if (!model.params().bit_identical(saved)) throw RestoreError("SAM restore left parameters changed");
  at_theta.gradient = std::move(sharp);
  return at_theta;
}

Evaluated evaluate(PolicyModel& model, std::span<const PreferencePair> batch, ObjectiveKind kind,
                   const StepContext& ctx) {
  switch (kind) {
    case ObjectiveKind::Gapo: return evaluate_gapo(model, batch, ctx.cfg);
    case ObjectiveKind::Dpo: return evaluate_dpo(model, batch, ctx);
    case ObjectiveKind::Simpo: return evaluate_simpo(model, batch, ctx.cfg);
    case ObjectiveKind::SimpoSam: return evaluate_sam(model, batch, ctx.cfg.rho, ctx.cfg);
  }
  throw InputError("unknown objective");
}

StepMetrics run_step(PolicyModel& model, std::span<const PreferencePair> batch, ObjectiveKind kind,
                     const StepContext& ctx, Optimizer& opt) {
  if (batch.empty()) throw InputError("train_step: empty batch");
  const auto t0 = std::chrono::steady_clock::now();
  const std::string where = "step " + std::to_string(ctx.step);
  const diff::ParamVector saved = model.params();

  Evaluated ev;
  try {
    ev = evaluate(model, batch, kind, ctx);
  } catch (const NumericError& e) {
    throw NumericError(where, "training aborted at " + where + ": " + e.what());
  }
  const double gnorm = diff::l2_norm(ev.gradient.values);
  if (!std::isfinite(ev.loss) || !std::isfinite(gnorm)) {
    throw NumericError(where, "training aborted at " + where + ": non-finite loss or gradient");
  }
  if (!model.params().bit_identical(saved)) {
    throw RestoreError("parameters changed before the optimizer update at " + where);
  }
  if (ctx.observer) ctx.observer(saved, model.params());
  try {
    opt.step(model.params(), ev.gradient);
  } catch (const NumericError&) {
    throw NumericError(where, "optimizer produced non-finite parameters at " + where);
  }

  StepMetrics m;
  m.step = ctx.step;
  m.loss = ev.loss;
  m.mean_margin = ev.mean_margin;
  m.mean_gap = ev.mean_gap;
  m.mean_weight = ev.mean_weight;
  m.grad_norm = gnorm;
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

}  // namespace

StepMetrics train_step(PolicyModel& model, std::span<const PreferencePair> batch, ObjectiveKind kind,
                       const StepContext& ctx, Optimizer& opt) {
  return run_step(model, batch, kind, ctx, opt);
}

StepMetrics sam_step(PolicyModel& model, std::span<const PreferencePair> batch, double rho,
                     const StepContext& ctx, Optimizer& opt) {
  StepContext sam_ctx = ctx;
  sam_ctx.cfg.rho = rho;
  return run_step(model, batch, ObjectiveKind::SimpoSam, sam_ctx, opt);
}

diff::Gradient step_gradient(PolicyModel& model, std::span<const PreferencePair> batch,
                             ObjectiveKind kind, const StepContext& ctx) {
  return evaluate(model, batch, kind, ctx).gradient;
}

TrainSummary train_run(PolicyModel& model, std::span<const PreferencePair> dataset,
                       const TrainSettings& settings, const ReferenceModel* reference,
                       const MetricsSink& sink) {
  if (dataset.empty()) throw InputError("train_run: empty dataset");
  if (settings.batch_size == 0) throw ConfigError("batch size must be positive");
  if (settings.epochs < 0) throw ConfigError("epochs must be non-negative");
  objectives::validate(settings.cfg);
  if (settings.objective == ObjectiveKind::Dpo && reference == nullptr) {
    throw ConfigError("dpo needs a reference model");
  }
  const auto t0 = std::chrono::steady_clock::now();
  Optimizer opt(settings.optimizer);
  StepContext ctx{settings.cfg, reference, {}, 0};
  TrainSummary summary;
  std::vector<PreferencePair> batch;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    util::Rng rng(util::derive_seed(settings.seed, static_cast<std::uint64_t>(epoch)));
    const auto order = util::shuffled_indices(dataset.size(), rng);
    double epoch_loss = 0.0;
    long epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += settings.batch_size) {
      const std::size_t end = std::min(order.size(), start + settings.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      const auto m = train_step(model, batch, settings.objective, ctx, opt);
      if (sink) sink(m);
      epoch_loss += m.loss;
      ++epoch_steps;
      ++ctx.step;
    }
    summary.final_loss = epoch_steps > 0 ? epoch_loss / static_cast<double>(epoch_steps) : 0.0;
  }
  summary.steps = ctx.step;
  summary.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (settings.checkpoint_path) policy::save_checkpoint(model, *settings.checkpoint_path);
  return summary;
}

void write_metrics_header(std::ostream& out) {
  out << "step,loss,mean_margin,mean_gap,mean_weight,grad_norm,wall_time\n";
}

void write_metrics_row(std::ostream& out, const StepMetrics& m) {
  out << m.step << ',' << util::format_double(m.loss) << ',' << util::format_double(m.mean_margin)
      << ',' << util::format_double(m.mean_gap) << ',' << util::format_double(m.mean_weight) << ','
      << util::format_double(m.grad_norm) << ',' << util::format_double(m.wall_time) << '\n';
}

}  // namespace gapo::trainer
