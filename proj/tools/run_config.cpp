#include "gapo/cli/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "gapo/errors.hpp"

namespace gapo::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<KeySpec>& RunConfig::keys() {
  static const std::vector<KeySpec> specs = {
      // files and directories
      {"dataset", "", "preference dataset (JSONL with .meta sidecar)"},
      {"out", "", "output file (gen, prune)"},
      {"out_dir", "", "run output directory"},
      {"init", "", "starting checkpoint (sft, train); fresh model when empty"},
      {"checkpoint", "", "model checkpoint to evaluate or probe"},
      {"reference", "", "frozen reference checkpoint (required for dpo)"},
      {"valuation", "", "valuation CSV produced by valuate (prune)"},
      {"seed", "0", "run seed"},
      // corpus
      {"vocab", "16", "vocabulary size"},
      {"pairs", "1000", "number of generated pairs (train + test)"},
      {"test_fraction", "0.2", "fraction of pairs held out as the test split"},
      {"length_bias", "0.5", "probability a pair forces the chosen response to be longer"},
      {"prompt_min", "2", "minimum prompt length"},
      {"prompt_max", "6", "maximum prompt length"},
      {"response_min", "3", "minimum response length"},
      {"response_max", "12", "maximum response length"},
      {"semantic", "0,1,2,3", "semantic token ids"},
      {"flip_random", "0", "rate of random label flips on the train split"},
      {"flip_length", "0", "rate of length-dependent label flips on the train split"},
      {"flip_seed", "0", "extra stream id for random flips"},
      // model
      {"arch", "mlp-lm", "policy architecture: mlp-lm or tabular-bigram"},
      {"window", "12", "mlp-lm context window"},
      {"embed", "8", "mlp-lm embedding width"},
      {"hidden", "16", "mlp-lm hidden width"},
      // sft
      {"sft_epochs", "1", "SFT epochs"},
      {"sft_responses", "chosen", "SFT targets: chosen or both"},
      // preference training
      {"method", "gapo", "gapo, dpo, simpo or simpo_sam"},
      {"beta", "2.5", "inverse temperature"},
      {"gamma", "0.1", "target margin"},
      {"rho", "0.05", "perturbation radius"},
      {"strategy", "batch", "perturbation strategy: batch or instance"},
      {"scope", "full", "perturbed segments: full or a '+'-joined list such as lm_head"},
      {"direction", "descent", "anchor direction: descent or ascent"},
      {"optimizer", "adam", "adam or sgd"},
      {"lr", "0.005", "learning rate"},
      {"batch_size", "16", "mini-batch size"},
      {"epochs", "3", "preference training epochs"},
      // evaluation
      {"split", "test", "evaluation split: train or test"},
      {"true_labels", "true", "score against pre-noise labels"},
      // valuation and pruning
      {"passes", "3", "valuation passes"},
      {"mode", "stable", "subset mode: stable, unstable or random"},
      {"fraction", "0.3", "subset fraction"},
      // spectrum
      {"iters", "20", "Lanczos iterations"},
      {"probe_pairs", "200", "train pairs in the spectrum probe batch"},
      // sweep
      {"methods", "gapo,dpo,simpo", "sweep methods"},
      {"kinds", "random,length", "sweep noise kinds"},
      {"rates", "0,0.1,0.2,0.3,0.4", "sweep flip rates"},
      {"seeds", "0,1,2,3,4", "sweep seeds"},
      {"jobs", "1", "sweep cells run in parallel"},
  };
  return specs;
}

bool RunConfig::known(const std::string& key) {
  const auto& k = keys();
  return std::any_of(k.begin(), k.end(), [&](const KeySpec& s) { return s.name == key; });
}

RunConfig::RunConfig() {
  for (const auto& k : keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::parse(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(n) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!known(key)) throw ConfigError(source + ":" + std::to_string(n) + ": unknown config key '" + key + "'");
    values_[key] = trim(line.substr(eq + 1));
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  parse(in, path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::number(const std::string& key) const {
  const auto& v = get(key);
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

long RunConfig::integer(const std::string& key) const {
  const auto& v = get(key);
  long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t RunConfig::seed() const {
  const long s = integer("seed");
  if (s < 0) throw ConfigError("seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

bool RunConfig::flag(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  const auto& v = get(key);
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto item = trim(v.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<double> RunConfig::numbers(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : list(key)) {
    double x = 0.0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (ec != std::errc() || p != item.data() + item.size()) {
      throw ConfigError("config key '" + key + "' expects numbers, got '" + item + "'");
    }
    out.push_back(x);
  }
  return out;
}

void RunConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write(out);
}

}  // namespace gapo::cli
