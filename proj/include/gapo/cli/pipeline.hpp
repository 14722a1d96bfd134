#pragma once

// RunConfig -> library settings, plus the per-cell experiment shared by the
// sweep command and the acceptance checks.

#include <cstdint>
#include <string>
#include <vector>

#include "gapo/analysis/valuation.hpp"
#include "gapo/cli/run_config.hpp"
#include "gapo/data/dataset.hpp"
#include "gapo/policy/sft.hpp"
#include "gapo/trainer/trainer.hpp"

namespace gapo::cli {

data::CorpusConfig corpus_config(const RunConfig& cfg);

// kind is "random" or "length". Random flips draw from a stream derived from
// the run seed and flip_seed.
data::PreferenceDataset apply_noise(const data::PreferenceDataset& ds, const std::string& kind, double rate,
                                    const RunConfig& cfg);

// generate_corpus followed by flip_random and flip_length (in that order).
data::PreferenceDataset make_dataset(const RunConfig& cfg);

policy::ModelShape model_shape(const RunConfig& cfg);
// The init checkpoint when set, otherwise a fresh model from the shape keys.
policy::PolicyModel initial_model(const RunConfig& cfg);

diff::ScopeMask parse_scope(const std::string& text);
objectives::GapoConfig gapo_config(const RunConfig& cfg);
trainer::OptimizerConfig optimizer_config(const RunConfig& cfg);
policy::SftConfig sft_config(const RunConfig& cfg);
trainer::TrainSettings train_settings(const RunConfig& cfg);
analysis::ValuationConfig valuation_config(const RunConfig& cfg);

// SFT targets from the train split: chosen responses, or both responses.
std::vector<policy::SftExample> sft_corpus(const data::PreferenceDataset& ds, const std::string& responses);

std::string hash_hex(std::uint64_t h);

struct CellResult {
  double test_accuracy = 0.0;
  long steps = 0;
  double final_loss = 0.0;
  std::string checkpoint_hash;
};

// One robustness cell: corpus and noise from cfg, fresh model, SFT
// (sft_epochs), the SFT model frozen as reference, preference training with
// cfg.method, test reward accuracy against true labels.
CellResult run_cell(const RunConfig& cfg);

struct SubsetResult {
  std::vector<analysis::ValuationRecord> records;
  double flipped_median_gap = 0.0;
  double clean_median_gap = 0.0;
  double stable_accuracy = 0.0;
  double random_accuracy = 0.0;
  double unstable_accuracy = 0.0;
};

// Valuation protocol: corpus with flip_random noise, SFT base model,
// valuate_dataset on the base, then `method` trained from the base on each
// `fraction` subset, scored on the test split against true labels.
SubsetResult run_subset_study(const RunConfig& cfg);

}  // namespace gapo::cli
