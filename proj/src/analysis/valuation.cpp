#include "gapo/analysis/valuation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "gapo/errors.hpp"
#include "gapo/util/format.hpp"
#include "gapo/util/rng.hpp"

namespace gapo::analysis {

namespace {

struct BatchJob {
  std::vector<std::size_t> members;  // indices into the train split
};

}  // namespace

std::vector<ValuationRecord> valuate_dataset(const policy::PolicyModel& model, const data::PreferenceDataset& ds,
                                             const ValuationConfig& cfg) {
  if (cfg.passes < 1) throw ConfigError("valuation needs at least one pass");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  objectives::validate(cfg.gapo);
  const std::size_t n = ds.train.size();
  if (n == 0) throw InputError("valuate_dataset: train split is empty");

  std::vector<BatchJob> jobs;
  for (int pass = 0; pass < cfg.passes; ++pass) {
    util::Rng rng(util::derive_seed(cfg.seed, static_cast<std::uint64_t>(pass)));
    const auto order = util::shuffled_indices(n, rng);
    for (std::size_t s = 0; s < n; s += cfg.batch_size) {
      BatchJob job;
      job.members.assign(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + cfg.batch_size)));
      jobs.push_back(std::move(job));
    }
  }

  std::vector<std::vector<double>> gaps(jobs.size());
  std::string failure;
  const auto n_jobs = static_cast<long>(jobs.size());
#pragma omp parallel
  {
    policy::PolicyModel local = model;
    std::vector<objectives::PreferencePair> batch;
#pragma omp for schedule(static)
    for (long j = 0; j < n_jobs; ++j) {
      try {
        batch.clear();
        for (std::size_t i : jobs[static_cast<std::size_t>(j)].members) batch.push_back(ds.train[i]);
        const auto records = objectives::anchor_records(local, batch, cfg.gapo);
        auto& out = gaps[static_cast<std::size_t>(j)];
        for (const auto& r : records) out.push_back(r.gap);
      } catch (const std::exception& e) {
#pragma omp critical(gapo_valuation_error)
        if (failure.empty()) failure = e.what();
      }
    }
  }
  if (!failure.empty()) throw NumericError("valuation", failure);

  std::vector<double> sum(n, 0.0);
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (std::size_t k = 0; k < jobs[j].members.size(); ++k) sum[jobs[j].members[k]] += gaps[j][k];
  }
  std::vector<ValuationRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    records[i].pair_id = ds.train[i].pair_id;
    records[i].mean_gap = sum[i] / static_cast<double>(cfg.passes);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].mean_gap != records[b].mean_gap) return records[a].mean_gap < records[b].mean_gap;
    return records[a].pair_id < records[b].pair_id;
  });
  for (std::size_t r = 0; r < n; ++r) records[order[r]].rank = r;
  return records;
}

std::string to_string(SubsetMode mode) {
  switch (mode) {
    case SubsetMode::Stable: return "stable";
    case SubsetMode::Unstable: return "unstable";
    case SubsetMode::Random: return "random";
  }
  return "unknown";
}

SubsetMode parse_subset_mode(const std::string& text) {
  if (text == "stable") return SubsetMode::Stable;
  if (text == "unstable") return SubsetMode::Unstable;
  if (text == "random") return SubsetMode::Random;
  throw ConfigError("unknown subset mode '" + text + "'");
}

data::PreferenceDataset select_subset(const std::vector<ValuationRecord>& records,
                                      const data::PreferenceDataset& ds, double fraction, SubsetMode mode,
                                      std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw ConfigError("fraction must be in (0, 1]");
  const std::size_t n = ds.train.size();
  if (records.size() != n) throw InputError("select_subset: one valuation record per train pair is required");

  std::unordered_map<std::int64_t, std::size_t> rank_of;
  for (const auto& r : records) rank_of[r.pair_id] = r.rank;
  std::vector<std::size_t> by_rank(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = rank_of.find(ds.train[i].pair_id);
    if (it == rank_of.end() || it->second >= n || by_rank[it->second] != n) {
      throw InputError("select_subset: valuation records do not match the train split");
    }
    by_rank[it->second] = i;
  }

  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> chosen;
  switch (mode) {
    case SubsetMode::Stable:
      chosen.assign(by_rank.begin(), by_rank.begin() + static_cast<std::ptrdiff_t>(k));
      break;
    case SubsetMode::Unstable:
      chosen.assign(by_rank.end() - static_cast<std::ptrdiff_t>(k), by_rank.end());
      break;
    case SubsetMode::Random: {
      util::Rng rng(seed);
      const auto order = util::shuffled_indices(n, rng);
      chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
      break;
    }
  }
  std::sort(chosen.begin(), chosen.end());

  data::PreferenceDataset out;
  out.config = ds.config;
  out.noise = ds.noise;
  out.test = ds.test;
  for (std::size_t i : chosen) out.train.push_back(ds.train[i]);
  return out;
}

void write_valuation_csv(std::ostream& out, const std::vector<ValuationRecord>& records) {
  out << "pair_id,mean_gap,rank\n";
  for (const auto& r : records) out << r.pair_id << ',' << util::format_double(r.mean_gap) << ',' << r.rank << '\n';
}

std::vector<ValuationRecord> read_valuation_csv(std::istream& in) {
  std::vector<ValuationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != "pair_id,mean_gap,rank") throw FormatError(1, "expected header pair_id,mean_gap,rank");
      continue;
    }
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw FormatError(lineno, "expected three fields");
    ValuationRecord r;
    const char* b = line.data();
    const auto ok = [](std::from_chars_result res, const char* end) { return res.ec == std::errc{} && res.ptr == end; };
    if (!ok(std::from_chars(b, b + c1, r.pair_id), b + c1) ||
        !ok(std::from_chars(b + c1 + 1, b + c2, r.mean_gap), b + c2) ||
        !ok(std::from_chars(b + c2 + 1, b + line.size(), r.rank), b + line.size())) {
      throw FormatError(lineno, "malformed valuation row");
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace gapo::analysis
