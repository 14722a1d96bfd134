#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gapo/data/dataset.hpp"
#include "gapo/objectives/objectives.hpp"

namespace gapo::analysis {

struct ValuationRecord {
  std::int64_t pair_id = 0;
  double mean_gap = 0.0;
  std::size_t rank = 0;  // 0 = lowest gap (most stable)

  bool operator==(const ValuationRecord&) const = default;
};

struct ValuationConfig {
  objectives::GapoConfig gapo{};
  int passes = 3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

// Averages Γ_i over `passes` reshuffled batchings of the train split. The
// model is perturbed and restored batch by batch but never updated; batches
// run in parallel on private model copies. Records come back in train order.
std::vector<ValuationRecord> valuate_dataset(const policy::PolicyModel& model, const data::PreferenceDataset& ds,
                                             const ValuationConfig& cfg);

enum class SubsetMode { Stable, Unstable, Random };

std::string to_string(SubsetMode mode);
SubsetMode parse_subset_mode(const std::string& text);

// floor(fraction * n_train) train pairs: lowest ranks (stable), highest
// ranks (unstable) or a seeded uniform sample (random). Selected pairs keep
// their train order; the test split is copied unchanged.
data::PreferenceDataset select_subset(const std::vector<ValuationRecord>& records,
                                      const data::PreferenceDataset& ds, double fraction, SubsetMode mode,
                                      std::uint64_t seed);

// Header pair_id,mean_gap,rank.
void write_valuation_csv(std::ostream& out, const std::vector<ValuationRecord>& records);
std::vector<ValuationRecord> read_valuation_csv(std::istream& in);

}  // namespace gapo::analysis
