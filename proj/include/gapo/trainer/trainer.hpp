#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gapo/objectives/objectives.hpp"
#include "gapo/trainer/optimizer.hpp"

namespace gapo::trainer {

using objectives::GapoConfig;
using objectives::PreferencePair;
using policy::PolicyModel;
using policy::ReferenceModel;

enum class ObjectiveKind { Gapo, Dpo, Simpo, SimpoSam };

std::string to_string(ObjectiveKind kind);
ObjectiveKind parse_objective(const std::string& text);

struct StepMetrics {
  long step = 0;
  double loss = 0.0;
  double mean_margin = 0.0;
  double mean_gap = 0.0;
  double mean_weight = 0.0;
  double grad_norm = 0.0;  // norm of the gradient handed to the optimizer
  double wall_time = 0.0;  // seconds spent in the step
};

// Called right before the optimizer update with the parameters saved before
// any perturbation and the parameters about to be updated.
using RestoreObserver = std::function<void(const diff::ParamVector& saved, const diff::ParamVector& current)>;

struct StepContext {
  GapoConfig cfg{};                          // β, γ, ρ, strategy, scope
  const ReferenceModel* reference = nullptr; // required for dpo
  RestoreObserver observer{};
  long step = 0;
};

// One optimizer step of the chosen objective on `batch`. Throws NumericError
// (naming the step) on a non-finite loss or gradient and RestoreError if the
// parameters are not bit-identical to their pre-perturbation copy.
StepMetrics train_step(PolicyModel& model, std::span<const PreferencePair> batch, ObjectiveKind kind,
                       const StepContext& ctx, Optimizer& opt);

// Classic two-step SAM on the SimPO loss: ascend to θ + ρ ∇L/||∇L||, take the
// gradient there, restore θ, update with that gradient.
StepMetrics sam_step(PolicyModel& model, std::span<const PreferencePair> batch, double rho,
                     const StepContext& ctx, Optimizer& opt);

// The gradient a step would apply, without touching the optimizer. Used to
// compare update directions across objectives.
diff::Gradient step_gradient(PolicyModel& model, std::span<const PreferencePair> batch,
                             ObjectiveKind kind, const StepContext& ctx);

struct TrainSettings {
  ObjectiveKind objective = ObjectiveKind::Gapo;
  GapoConfig cfg{};
  OptimizerConfig optimizer{};
  std::size_t batch_size = 16;
  int epochs = 3;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint_path{};
};

struct TrainSummary {
  long steps = 0;
  double final_loss = 0.0;  // mean loss over the last epoch
  double total_seconds = 0.0;
};

using MetricsSink = std::function<void(const StepMetrics&)>;

// Seeded shuffling each epoch (Fisher–Yates, seed advanced per epoch),
// consecutive mini-batches of batch_size (the last one may be shorter).
TrainSummary train_run(PolicyModel& model, std::span<const PreferencePair> dataset,
                       const TrainSettings& settings, const ReferenceModel* reference,
                       const MetricsSink& sink = {});

// Header "step,loss,mean_margin,mean_gap,mean_weight,grad_norm,wall_time".
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const StepMetrics& m);

}  // namespace gapo::trainer
