#pragma once

// Preference margins, the geometric anchor, and the GAPO / DPO / SimPO losses.
//
// Margin of pair i:          M_i(θ) = p(x, y_w) − p(x, y_l), p = log π / |y|
// Anchor:                    θ̃ = θ + ε, ε = −ρ g / ||g||, g = masked ∇M
// Anchor gap:                Γ_i = M_i(θ) − sg(M_i(θ̃))
// GAPO loss:                 −mean log σ(β Γ_i − γ)
// Its gradient is            −mean w_i ∇M_i with w_i = β σ(γ − β Γ_i).

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gapo/diff/differentiate.hpp"
#include "gapo/diff/param_vector.hpp"
#include "gapo/objectives/preference_pair.hpp"
#include "gapo/policy/policy_model.hpp"

namespace gapo::objectives {

using policy::PolicyModel;
using policy::ReferenceModel;

enum class Strategy { Batch, Instance };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

// Descent: ε = −ρ g/||g|| lowers the margin (the anchor is pessimistic).
// Ascent: ε = +ρ g/||g|| raises it. Kept as an option for comparison;
// descent is the default.
enum class Direction { Descent, Ascent };

std::string to_string(Direction d);
Direction parse_direction(const std::string& text);

struct GapoConfig {
  double beta = 2.5;
  double gamma = 0.1;
  double rho = 0.05;
  Strategy strategy = Strategy::Batch;
  diff::ScopeMask scope{};  // empty = all segments
  Direction direction = Direction::Descent;
};

void validate(const GapoConfig& cfg);

struct AnchorRecord {
  std::int64_t pair_id = 0;
  double margin = 0.0;         // M_i(θ)
  double anchor_margin = 0.0;  // M_i(θ̃)
  double gap = 0.0;            // margin − anchor_margin
  double weight = 0.0;         // β σ(γ − β gap)
};

struct Perturbation {
  std::vector<double> epsilon;
  double gradient_norm = 0.0;  // ||masked g||
  bool degenerate = false;     // ρ > 0 but ||g|| ≤ kDegenerateNorm, so ε = 0
};

inline constexpr double kDegenerateNorm = 1e-12;

// ----- graph builders (the differentiable forms) -----

// (N x 1) margins of `batch` under parameters `theta`.
diff::Var margins(const PolicyModel& model, diff::Tape& tape, diff::Var theta,
                  std::span<const PreferencePair> batch);

// The objectives below capture `model`, `batch` and `anchor_margins` by
// reference; they must outlive the returned function.
diff::Objective mean_margin_objective(const PolicyModel& model, std::span<const PreferencePair> batch);
diff::Objective gapo_objective(const PolicyModel& model, std::span<const PreferencePair> batch,
                               std::span<const double> anchor_margins, double beta, double gamma);
diff::Objective simpo_objective(const PolicyModel& model, std::span<const PreferencePair> batch,
                                double beta, double gamma);
// Reference log-probs are evaluated once and enter as constants.
diff::Objective dpo_objective(const PolicyModel& model, const ReferenceModel& reference,
                              std::span<const PreferencePair> batch, double beta);

// ----- scalar operations -----

double margin(const PolicyModel& model, const PreferencePair& pair);
std::vector<double> margin_values(const PolicyModel& model, std::span<const PreferencePair> batch);

Perturbation batch_perturbation(const PolicyModel& model, std::span<const PreferencePair> batch,
                                double rho, const diff::ScopeMask& scope,
                                Direction direction = Direction::Descent);
Perturbation instance_perturbation(const PolicyModel& model, const PreferencePair& pair, double rho,
                                   const diff::ScopeMask& scope, Direction direction = Direction::Descent);

// Builds ε per cfg.strategy, evaluates M_i(θ + ε) without gradient recording,
// copies the saved parameters back and verifies they are bit-identical
// (RestoreError otherwise). Requires exclusive access to `model`.
std::vector<AnchorRecord> anchor_records(PolicyModel& model, std::span<const PreferencePair> batch,
                                         const GapoConfig& cfg);

std::vector<double> gapo_weights(std::span<const double> gaps, double beta, double gamma);

struct GapoLoss {
  double loss = 0.0;
  diff::Gradient gradient;
  std::vector<AnchorRecord> records;
};

GapoLoss gapo_loss(PolicyModel& model, std::span<const PreferencePair> batch, const GapoConfig& cfg);
// Loss value for already computed anchor margins.
double gapo_loss_value(const PolicyModel& model, std::span<const PreferencePair> batch,
                       std::span<const double> anchor_margins, double beta, double gamma);

double dpo_loss(const PolicyModel& model, const ReferenceModel& reference,
                std::span<const PreferencePair> batch, double beta);
double simpo_loss(const PolicyModel& model, std::span<const PreferencePair> batch, double beta,
                  double gamma);

// CSV with header pair_id,margin,anchor_margin,gap,weight.
void write_anchor_csv(std::ostream& out, std::span<const AnchorRecord> records);

}  // namespace gapo::objectives
