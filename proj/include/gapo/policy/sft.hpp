#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gapo/policy/policy_model.hpp"
#include "gapo/trainer/optimizer.hpp"

namespace gapo::policy {

struct SftExample {
  TokenSeq prompt;
  TokenSeq response;
};

struct SftConfig {
  int epochs = 2;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  trainer::OptimizerConfig optimizer{};
};

struct SftResult {
  double initial_nll = 0.0;  // mean per-sequence NLL over the corpus before training
  double final_nll = 0.0;
  std::vector<double> step_nll;  // batch NLL at every step, before its update
};

// Minimizes the mean sequence NLL of `corpus` in place. Mini-batches are
// reshuffled each epoch. Throws NumericError naming the step if the loss or
// gradient stops being finite.
SftResult sft_train(PolicyModel& model, const std::vector<SftExample>& corpus, const SftConfig& config);

// Mean of −log π(y|x) over the corpus.
double mean_nll(const PolicyModel& model, const std::vector<SftExample>& corpus);

}  // namespace gapo::policy
