#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gapo/objectives/preference_pair.hpp"
#include "gapo/policy/policy_model.hpp"

namespace gapo::data {

using objectives::PreferencePair;
using policy::Token;
using policy::TokenSeq;

struct CorpusConfig {
  int vocab = 16;
  std::size_t n_pairs = 1000;  // train + test
  double test_fraction = 0.2;
  int prompt_min = 2;
  int prompt_max = 6;
  int response_min = 3;
  int response_max = 12;
  std::vector<Token> semantic{0, 1, 2, 3};
  std::vector<Token> filler{};  // empty: every token not in `semantic`
  double length_bias = 0.5;     // probability a pair forces |y_w| ≥ |y_l|
  std::uint64_t seed = 0;
};

// Throws ConfigError for invalid ranges, an empty or overlapping token set, etc.
void validate(const CorpusConfig& cfg);
// `filler` resolved to the complement of `semantic` when left empty.
std::vector<Token> filler_tokens(const CorpusConfig& cfg);

struct NoiseRecord {
  std::string kind;  // "random" or "length"
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::size_t flipped = 0;
  std::size_t shortfall = 0;  // length flips that had no eligible pair

  bool operator==(const NoiseRecord&) const = default;
};

struct PreferenceDataset {
  std::vector<PreferencePair> train;
  std::vector<PreferencePair> test;
  std::optional<CorpusConfig> config;
  std::vector<NoiseRecord> noise;
};

enum class Split { Train, Test };
Split parse_split(const std::string& text);

// Fraction of semantic tokens in y; the ground-truth reward.
double semantic_density(const TokenSeq& y, const std::vector<Token>& semantic);

// Pure function of cfg. Pair ids are 0..n-1; the last
// round(test_fraction * n) pairs form the test split.
PreferenceDataset generate_corpus(const CorpusConfig& cfg);

// Each train pair swaps (y_w, y_l) independently with probability `rate`.
PreferenceDataset inject_random_flips(const PreferenceDataset& ds, double rate, std::uint64_t seed);

// Swaps the ceil(rate * n_train) train pairs with the largest |y_w| − |y_l| > 0
// (ties by pair_id) so the shorter response becomes preferred.
PreferenceDataset inject_length_flips(const PreferenceDataset& ds, double rate);

using Scorer = std::function<double(const TokenSeq& x, const TokenSeq& y)>;

// Fraction of pairs whose first response scores above the second, using the
// stored order or, with use_true_labels, the pre-noise order. Ties (within
// 1e-12 relative) count one half.
double reward_accuracy(const policy::PolicyModel& model, const PreferenceDataset& ds, Split split,
                       bool use_true_labels);
double reward_accuracy(const Scorer& scorer, const PreferenceDataset& ds, Split split,
                       bool use_true_labels);

// ----- files -----

// One JSON object per line: pair_id, x, y_w, y_l, true_label_swapped.
void write_jsonl(std::ostream& out, const std::vector<PreferencePair>& pairs);
// Throws FormatError carrying the 1-based line of the first malformed line.
std::vector<PreferencePair> read_jsonl(std::istream& in);

// Sidecar next to a dataset file: same stem, extension ".meta".
std::filesystem::path meta_path(const std::filesystem::path& dataset_path);

// Writes train then test pairs as JSONL plus the .meta sidecar (config,
// noise descriptors, split sizes).
void save_dataset(const PreferenceDataset& ds, const std::filesystem::path& path);
// Without a sidecar every pair is treated as train.
PreferenceDataset load_dataset(const std::filesystem::path& path);

}  // namespace gapo::data
