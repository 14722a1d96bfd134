#include <algorithm>
#include <cmath>
#include <set>
#include <span>

#include "gapo/data/dataset.hpp"
#include "gapo/errors.hpp"
#include "gapo/util/rng.hpp"

namespace gapo::data {

namespace {

constexpr int kMaxResample = 1000;

TokenSeq sample_tokens(util::Rng& rng, int length, int semantic_count, const std::vector<Token>& semantic,
                       const std::vector<Token>& filler) {
  TokenSeq out(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) {
    const auto& pool = i < semantic_count ? semantic : filler;
    out[static_cast<std::size_t>(i)] = pool[rng.index(pool.size())];
  }
  // Scatter the semantic tokens over the response.
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.index(i)]);
  return out;
}

}  // namespace

void validate(const CorpusConfig& cfg) {
  if (cfg.vocab < 2) throw ConfigError("vocabulary must have at least two tokens");
  if (cfg.prompt_min < 0 || cfg.prompt_max < cfg.prompt_min) throw ConfigError("invalid prompt length range");
  if (cfg.response_min < 1 || cfg.response_max < cfg.response_min) {
    throw ConfigError("invalid response length range");
  }
  if (!(cfg.test_fraction >= 0 && cfg.test_fraction < 1)) throw ConfigError("test_fraction must be in [0, 1)");
  if (!(cfg.length_bias >= 0 && cfg.length_bias <= 1)) throw ConfigError("length bias must be in [0, 1]");
  if (cfg.semantic.empty()) throw ConfigError("semantic token set is empty");
  std::set<Token> sem;
  for (Token t : cfg.semantic) {
    if (t < 0 || t >= cfg.vocab) throw ConfigError("semantic token outside vocabulary");
    sem.insert(t);
  }
  const auto filler = filler_tokens(cfg);
  if (filler.empty()) throw ConfigError("filler token set is empty");
  for (Token t : filler) {
    if (t < 0 || t >= cfg.vocab) throw ConfigError("filler token outside vocabulary");
    if (sem.count(t) != 0) throw ConfigError("semantic and filler token sets overlap");
  }
}

std::vector<Token> filler_tokens(const CorpusConfig& cfg) {
  if (!cfg.filler.empty()) return cfg.filler;
  std::vector<Token> out;
  for (Token t = 0; t < cfg.vocab; ++t) {
    if (std::find(cfg.semantic.begin(), cfg.semantic.end(), t) == cfg.semantic.end()) out.push_back(t);
  }
  return out;
}

double semantic_density(const TokenSeq& y, const std::vector<Token>& semantic) {
  if (y.empty()) return 0.0;
  std::size_t hits = 0;
  for (Token t : y) hits += std::find(semantic.begin(), semantic.end(), t) != semantic.end() ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

PreferenceDataset generate_corpus(const CorpusConfig& cfg) {
  validate(cfg);
  const auto filler = filler_tokens(cfg);
  util::Rng rng(cfg.seed);
  PreferenceDataset ds;
  ds.config = cfg;
  const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(cfg.n_pairs)));
  const std::size_t n_train = cfg.n_pairs - n_test;

  for (std::size_t id = 0; id < cfg.n_pairs; ++id) {
    PreferencePair pair;
    pair.pair_id = static_cast<std::int64_t>(id);
    const int prompt_len = rng.range(cfg.prompt_min, cfg.prompt_max);
    for (int i = 0; i < prompt_len; ++i) pair.x.push_back(static_cast<Token>(rng.index(static_cast<std::uint64_t>(cfg.vocab))));

    const bool biased = rng.bernoulli(cfg.length_bias);
    int len_a = rng.range(cfg.response_min, cfg.response_max);
    int len_b = rng.range(cfg.response_min, cfg.response_max);
    if (biased && len_a < len_b) std::swap(len_a, len_b);  // candidate a will be the winner

    bool done = false;
    for (int attempt = 0; attempt < kMaxResample && !done; ++attempt) {
      const int k_a = rng.range(0, len_a);
      const int k_b = rng.range(0, len_b);
      // Compare k_a / len_a with k_b / len_b exactly.
      const long lhs = static_cast<long>(k_a) * len_b;
      const long rhs = static_cast<long>(k_b) * len_a;
      if (lhs == rhs) continue;
      if (biased && lhs < rhs) continue;
      TokenSeq a = sample_tokens(rng, len_a, k_a, cfg.semantic, filler);
      TokenSeq b = sample_tokens(rng, len_b, k_b, cfg.semantic, filler);
      if (lhs > rhs) {
        pair.y_w = std::move(a);
        pair.y_l = std::move(b);
      } else {
        pair.y_w = std::move(b);
        pair.y_l = std::move(a);
      }
      done = true;
    }
    if (!done) throw ConfigError("could not sample a pair with distinct rewards; widen the length range");
    (id < n_train ? ds.train : ds.test).push_back(std::move(pair));
  }
  return ds;
}

PreferenceDataset inject_random_flips(const PreferenceDataset& ds, double rate, std::uint64_t seed) {
  if (!(rate >= 0 && rate <= 1)) throw ConfigError("flip rate must be in [0, 1]");
  PreferenceDataset out = ds;
  util::Rng rng(seed);
  std::size_t flipped = 0;
  for (auto& pair : out.train) {
    if (rng.uniform() < rate) {
      pair = objectives::swapped(pair);
      ++flipped;
    }
  }
  out.noise.push_back({"random", rate, seed, flipped, 0});
  return out;
}

PreferenceDataset inject_length_flips(const PreferenceDataset& ds, double rate) {
  if (!(rate >= 0 && rate <= 1)) throw ConfigError("flip rate must be in [0, 1]");
  PreferenceDataset out = ds;
  const auto target = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(out.train.size()) - 1e-9));
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < out.train.size(); ++i) {
    if (out.train[i].y_w.size() > out.train[i].y_l.size()) eligible.push_back(i);
  }
  auto gap = [&](std::size_t i) {
    return static_cast<long>(out.train[i].y_w.size()) - static_cast<long>(out.train[i].y_l.size());
  };
  std::stable_sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
    if (gap(a) != gap(b)) return gap(a) > gap(b);
    return out.train[a].pair_id < out.train[b].pair_id;
  });
  const std::size_t n = std::min(target, eligible.size());
  for (std::size_t k = 0; k < n; ++k) out.train[eligible[k]] = objectives::swapped(out.train[eligible[k]]);
  out.noise.push_back({"length", rate, 0, n, target - n});
  return out;
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw ConfigError("unknown split '" + text + "'");
}

namespace {

double tally(const std::vector<PreferencePair>& pairs, std::span<const double> chosen,
             std::span<const double> rejected, bool use_true_labels) {
  double correct = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const bool flip = use_true_labels && pairs[i].true_label_swapped;
    const double a = flip ? rejected[i] : chosen[i];
    const double b = flip ? chosen[i] : rejected[i];
    const double tol = 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
    if (std::abs(a - b) <= tol) {
      correct += 0.5;
    } else if (a > b) {
      correct += 1.0;
    }
  }
  return correct / static_cast<double>(pairs.size());
}

const std::vector<PreferencePair>& split_pairs(const PreferenceDataset& ds, Split split) {
  const auto& pairs = split == Split::Train ? ds.train : ds.test;
  if (pairs.empty()) throw InputError("reward_accuracy: split is empty");
  return pairs;
}

}  // namespace

double reward_accuracy(const Scorer& scorer, const PreferenceDataset& ds, Split split, bool use_true_labels) {
  const auto& pairs = split_pairs(ds, split);
  std::vector<double> chosen, rejected;
  for (const auto& p : pairs) {
    chosen.push_back(scorer(p.x, p.y_w));
    rejected.push_back(scorer(p.x, p.y_l));
  }
  return tally(pairs, chosen, rejected, use_true_labels);
}

double reward_accuracy(const policy::PolicyModel& model, const PreferenceDataset& ds, Split split,
                       bool use_true_labels) {
  const auto& pairs = split_pairs(ds, split);
  std::vector<policy::SeqRef> refs;
  refs.reserve(pairs.size() * 2);
  for (const auto& p : pairs) {
    refs.push_back({&p.x, &p.y_w});
    refs.push_back({&p.x, &p.y_l});
  }
  const auto rewards = model.p_rewards(refs);
  std::vector<double> chosen(pairs.size()), rejected(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    chosen[i] = rewards[2 * i];
    rejected[i] = rewards[2 * i + 1];
  }
  return tally(pairs, chosen, rejected, use_true_labels);
}

}  // namespace gapo::data
