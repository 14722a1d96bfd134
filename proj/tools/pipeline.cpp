#include "gapo/cli/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "gapo/errors.hpp"
#include "gapo/policy/checkpoint.hpp"
#include "gapo/util/rng.hpp"

namespace gapo::cli {

namespace {

int to_int(const RunConfig& cfg, const std::string& key) {
  const long v = cfg.integer(key);
  if (v < 0 || v > 1'000'000'000) throw ConfigError("config key '" + key + "' is out of range");
  return static_cast<int>(v);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Stream ids for seeds derived from the run seed.
constexpr std::uint64_t kFlipStream = 1000;
constexpr std::uint64_t kSubsetStream = 2;

}  // namespace

data::CorpusConfig corpus_config(const RunConfig& cfg) {
  data::CorpusConfig c;
  c.vocab = to_int(cfg, "vocab");
  c.n_pairs = static_cast<std::size_t>(to_int(cfg, "pairs"));
  c.test_fraction = cfg.number("test_fraction");
  c.length_bias = cfg.number("length_bias");
  c.prompt_min = to_int(cfg, "prompt_min");
  c.prompt_max = to_int(cfg, "prompt_max");
  c.response_min = to_int(cfg, "response_min");
  c.response_max = to_int(cfg, "response_max");
  c.semantic.clear();
  for (double t : cfg.numbers("semantic")) c.semantic.push_back(static_cast<data::Token>(t));
  c.seed = cfg.seed();
  data::validate(c);
  return c;
}

data::PreferenceDataset apply_noise(const data::PreferenceDataset& ds, const std::string& kind, double rate,
                                    const RunConfig& cfg) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("flip rate must be in [0, 1]");
  if (kind == "random") {
    const long extra = cfg.integer("flip_seed");
    if (extra < 0) throw ConfigError("flip_seed must be non-negative");
    return data::inject_random_flips(ds, rate,
                                     util::derive_seed(cfg.seed(), kFlipStream + static_cast<std::uint64_t>(extra)));
  }
  if (kind == "length") return data::inject_length_flips(ds, rate);
  throw ConfigError("unknown noise kind '" + kind + "' (expected random or length)");
}

data::PreferenceDataset make_dataset(const RunConfig& cfg) {
  auto ds = data::generate_corpus(corpus_config(cfg));
  const double random_rate = cfg.number("flip_random");
  const double length_rate = cfg.number("flip_length");
  if (random_rate != 0.0) ds = apply_noise(ds, "random", random_rate, cfg);
  if (length_rate != 0.0) ds = apply_noise(ds, "length", length_rate, cfg);
  return ds;
}

policy::ModelShape model_shape(const RunConfig& cfg) {
  policy::ModelShape s;
  s.arch = policy::parse_arch(cfg.get("arch"));
  s.vocab = to_int(cfg, "vocab");
  s.window = to_int(cfg, "window");
  s.embed = to_int(cfg, "embed");
  s.hidden = to_int(cfg, "hidden");
  if (s.vocab < 1) throw ConfigError("vocab must be positive");
  if (s.arch == policy::Arch::MlpLm && (s.window < 1 || s.embed < 1 || s.hidden < 1)) {
    throw ConfigError("window, embed and hidden must be positive");
  }
  return s;
}

policy::PolicyModel initial_model(const RunConfig& cfg) {
  if (!cfg.get("init").empty()) return policy::load_checkpoint(cfg.get("init"));
  return policy::PolicyModel::create(model_shape(cfg), cfg.seed());
}

diff::ScopeMask parse_scope(const std::string& text) {
  if (text.empty() || text == "full" || text == "all") return diff::ScopeMask{};
  std::set<std::string> segments;
  std::size_t start = 0;
  while (true) {
    const auto plus = text.find('+', start);
    const auto name = text.substr(start, plus == std::string::npos ? std::string::npos : plus - start);
    if (name.empty()) throw ConfigError("malformed scope '" + text + "'");
    segments.insert(name);
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return diff::ScopeMask(std::move(segments));
}

objectives::GapoConfig gapo_config(const RunConfig& cfg) {
  objectives::GapoConfig g;
  g.beta = cfg.number("beta");
  g.gamma = cfg.number("gamma");
  g.rho = cfg.number("rho");
  g.strategy = objectives::parse_strategy(cfg.get("strategy"));
  g.direction = objectives::parse_direction(cfg.get("direction"));
  g.scope = parse_scope(cfg.get("scope"));
  objectives::validate(g);
  return g;
}

trainer::OptimizerConfig optimizer_config(const RunConfig& cfg) {
  trainer::OptimizerConfig o;
  o.kind = trainer::parse_optimizer(cfg.get("optimizer"));
  o.lr = cfg.number("lr");
  if (!(o.lr >= 0.0)) throw ConfigError("lr must be non-negative");
  return o;
}

policy::SftConfig sft_config(const RunConfig& cfg) {
  policy::SftConfig s;
  s.epochs = to_int(cfg, "sft_epochs");
  s.batch_size = static_cast<std::size_t>(to_int(cfg, "batch_size"));
  if (s.batch_size == 0) throw ConfigError("batch_size must be positive");
  s.seed = cfg.seed();
  s.optimizer = optimizer_config(cfg);
  return s;
}

trainer::TrainSettings train_settings(const RunConfig& cfg) {
  trainer::TrainSettings t;
  t.objective = trainer::parse_objective(cfg.get("method"));
  t.cfg = gapo_config(cfg);
  t.optimizer = optimizer_config(cfg);
  t.batch_size = static_cast<std::size_t>(to_int(cfg, "batch_size"));
  if (t.batch_size == 0) throw ConfigError("batch_size must be positive");
  t.epochs = to_int(cfg, "epochs");
  t.seed = cfg.seed();
  return t;
}

analysis::ValuationConfig valuation_config(const RunConfig& cfg) {
  analysis::ValuationConfig v;
  v.gapo = gapo_config(cfg);
  v.passes = to_int(cfg, "passes");
  if (v.passes < 1) throw ConfigError("passes must be at least 1");
  v.batch_size = static_cast<std::size_t>(to_int(cfg, "batch_size"));
  if (v.batch_size == 0) throw ConfigError("batch_size must be positive");
  v.seed = cfg.seed();
  return v;
}

std::vector<policy::SftExample> sft_corpus(const data::PreferenceDataset& ds, const std::string& responses) {
  if (responses != "chosen" && responses != "both") {
    throw ConfigError("sft_responses must be chosen or both, got '" + responses + "'");
  }
  std::vector<policy::SftExample> out;
  for (const auto& p : ds.train) {
    out.push_back({p.x, p.y_w});
    if (responses == "both") out.push_back({p.x, p.y_l});
  }
  return out;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

policy::PolicyModel sft_base(const RunConfig& cfg, const data::PreferenceDataset& ds) {
  auto model = initial_model(cfg);
  const auto sc = sft_config(cfg);
  if (sc.epochs > 0) policy::sft_train(model, sft_corpus(ds, cfg.get("sft_responses")), sc);
  return model;
}

}  // namespace

CellResult run_cell(const RunConfig& cfg) {
  const auto settings = train_settings(cfg);
  const auto ds = make_dataset(cfg);
  auto model = sft_base(cfg, ds);
  const auto reference = policy::freeze_reference(model);
  const auto summary = trainer::train_run(model, ds.train, settings, &reference);
  CellResult r;
  r.test_accuracy = data::reward_accuracy(model, ds, data::Split::Test, true);
  r.steps = summary.steps;
  r.final_loss = summary.final_loss;
  r.checkpoint_hash = hash_hex(policy::checkpoint_hash(model));
  return r;
}

SubsetResult run_subset_study(const RunConfig& cfg) {
  auto settings = train_settings(cfg);
  const auto ds = make_dataset(cfg);
  const auto base = sft_base(cfg, ds);
  const auto reference = policy::freeze_reference(base);

  SubsetResult r;
  r.records = analysis::valuate_dataset(base, ds, valuation_config(cfg));
  std::vector<double> flipped, clean;
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    (ds.train[i].true_label_swapped ? flipped : clean).push_back(r.records[i].mean_gap);
  }
  r.flipped_median_gap = median(flipped);
  r.clean_median_gap = median(clean);

  const double fraction = cfg.number("fraction");
  const auto subset_seed = util::derive_seed(cfg.seed(), kSubsetStream);
  const auto score = [&](analysis::SubsetMode mode) {
    const auto sub = analysis::select_subset(r.records, ds, fraction, mode, subset_seed);
    auto m = base;
    trainer::train_run(m, sub.train, settings, &reference);
    return data::reward_accuracy(m, ds, data::Split::Test, true);
  };
  r.stable_accuracy = score(analysis::SubsetMode::Stable);
  r.random_accuracy = score(analysis::SubsetMode::Random);
  r.unstable_accuracy = score(analysis::SubsetMode::Unstable);
  return r;
}

}  // namespace gapo::cli
