#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gapo/diff/param_vector.hpp"
#include "gapo/diff/tape.hpp"

namespace gapo::policy {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

enum class Arch { TabularBigram, MlpLm };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& text);

struct ModelShape {
  Arch arch = Arch::MlpLm;
  int vocab = 16;
  int window = 12;  // context tokens seen by mlp-lm
  int embed = 8;    // mlp-lm embedding width
  int hidden = 16;  // mlp-lm hidden width

  bool operator==(const ModelShape&) const = default;
};

// A (prompt, response) pair to score. Both point into caller-owned storage.
struct SeqRef {
  const TokenSeq* prompt = nullptr;
  const TokenSeq* response = nullptr;
};

// Autoregressive policy over a V-token vocabulary.
//
// tabular-bigram: one segment "lm_head" holding a V x V logit table indexed by
//   the previous token. A response at the start of an empty prompt is scored
//   against the uniform distribution.
// mlp-lm: "embed" ((V+1) x E, last row is the left-padding embedding),
//   "hidden" (W*E x H weights then H biases, tanh), "lm_head" (H x V weights
//   then V biases). The context is the last W tokens of prompt ++ response.
class PolicyModel {
 public:
  PolicyModel(ModelShape shape, diff::ParamVector params);

  static PolicyModel tabular_bigram(int vocab);
  // Hidden and embedding weights are drawn with `seed`; lm_head starts at
  // zero, so the initial model is exactly uniform.
  static PolicyModel mlp_lm(int vocab, int window, int embed, int hidden, std::uint64_t seed);
  static PolicyModel create(const ModelShape& shape, std::uint64_t seed);

  const ModelShape& shape() const noexcept { return shape_; }
  int vocab() const noexcept { return shape_.vocab; }
  diff::ParamVector& params() noexcept { return params_; }
  const diff::ParamVector& params() const noexcept { return params_; }

  // Column (n x 1) of log π(response | prompt) for every request, built on the
  // tape from the parameter node `theta`.
  diff::Var sequence_log_probs(diff::Tape& tape, diff::Var theta,
                               std::span<const SeqRef> requests) const;

  // Σ_t log π(y_t | x, y_<t). Throws InputError for empty y or tokens ≥ V.
  double log_prob(const TokenSeq& x, const TokenSeq& y) const;
  // log_prob / |y|.
  double p_reward(const TokenSeq& x, const TokenSeq& y) const;
  // Evaluated for many requests in one forward pass.
  std::vector<double> p_rewards(std::span<const SeqRef> requests) const;

  std::vector<double> next_token_probs(const TokenSeq& prefix) const;

  void validate(const TokenSeq& seq, bool allow_empty) const;

 private:
  diff::Var logits_for(diff::Var theta, const std::vector<int>& contexts,
                       std::size_t positions) const;

  ModelShape shape_;
  diff::ParamVector params_;
};

// Frozen deep copy of a policy; its parameters never change after creation.
class ReferenceModel {
 public:
  explicit ReferenceModel(const PolicyModel& source) : model_(source) {}
  const PolicyModel& model() const noexcept { return model_; }

 private:
  PolicyModel model_;
};

ReferenceModel freeze_reference(const PolicyModel& model);

}  // namespace gapo::policy
