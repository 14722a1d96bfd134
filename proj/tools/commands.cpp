#include "gapo/cli/commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "gapo/analysis/spectrum.hpp"
#include "gapo/analysis/valuation.hpp"
#include "gapo/cli/pipeline.hpp"
#include "gapo/errors.hpp"
#include "gapo/objectives/objectives.hpp"
#include "gapo/policy/checkpoint.hpp"
#include "gapo/policy/sft.hpp"
#include "gapo/trainer/trainer.hpp"
#include "gapo/util/format.hpp"

namespace gapo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string& require(const RunConfig& cfg, const std::string& key) {
  const auto& v = cfg.get(key);
  if (v.empty()) throw ConfigError("missing required key '" + key + "'");
  return v;
}

fs::path prepare_dir(const RunConfig& cfg) {
  const fs::path dir = require(cfg, "out_dir");
  fs::create_directories(dir);
  return dir;
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

// Written to a temporary name first so a crash never leaves a half file.
void write_json(const fs::path& path, const json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    auto out = open_out(tmp);
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

data::PreferenceDataset load_data(const RunConfig& cfg) { return data::load_dataset(require(cfg, "dataset")); }

}  // namespace

void cmd_gen(const RunConfig& cfg, std::ostream& out) {
  const fs::path path = require(cfg, "out");
  const auto ds = make_dataset(cfg);
  ensure_parent(path);
  data::save_dataset(ds, path);
  fs::path config_path = path;
  cfg.save(config_path.replace_extension(".config"));
  out << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test pairs to " << path.string()
      << '\n';
}

void cmd_sft(const RunConfig& cfg, std::ostream& out) {
  const auto sc = sft_config(cfg);
  const auto ds = load_data(cfg);
  const auto corpus = sft_corpus(ds, cfg.get("sft_responses"));
  auto model = initial_model(cfg);
  const auto dir = prepare_dir(cfg);
  cfg.save(dir / "config.txt");

  policy::SftResult result;
  if (corpus.empty()) {
    result.initial_nll = result.final_nll = 0.0;
  } else {
    result = policy::sft_train(model, corpus, sc);
  }
  policy::save_checkpoint(model, dir / "model.ckpt");
  {
    auto m = open_out(dir / "metrics.csv");
    m << "step,nll\n";
    for (std::size_t i = 0; i < result.step_nll.size(); ++i) {
      m << i << ',' << util::format_double(result.step_nll[i]) << '\n';
    }
  }
  write_json(dir / "summary.json", json{{"command", "sft"},
                                        {"examples", corpus.size()},
                                        {"steps", result.step_nll.size()},
                                        {"initial_nll", result.initial_nll},
                                        {"final_nll", result.final_nll},
                                        {"checkpoint_hash", hash_hex(policy::checkpoint_hash(model))}});
  out << "sft: nll " << util::format_double(result.initial_nll) << " -> " << util::format_double(result.final_nll)
      << ", checkpoint " << (dir / "model.ckpt").string() << '\n';
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto settings = train_settings(cfg);
  std::optional<policy::ReferenceModel> reference;
  if (!cfg.get("reference").empty()) {
    reference.emplace(policy::freeze_reference(policy::load_checkpoint(cfg.get("reference"))));
  } else if (settings.objective == trainer::ObjectiveKind::Dpo) {
    throw ConfigError("method dpo requires --reference <checkpoint>");
  }
  const auto ds = load_data(cfg);
  auto model = initial_model(cfg);
  const auto dir = prepare_dir(cfg);
  cfg.save(dir / "config.txt");

  auto metrics = open_out(dir / "metrics.csv");
  trainer::write_metrics_header(metrics);
  const auto summary = trainer::train_run(model, ds.train, settings, reference ? &*reference : nullptr,
                                          [&](const trainer::StepMetrics& m) { trainer::write_metrics_row(metrics, m); });
  metrics.close();
  policy::save_checkpoint(model, dir / "model.ckpt");
  write_json(dir / "summary.json", json{{"command", "train"},
                                        {"method", trainer::to_string(settings.objective)},
                                        {"steps", summary.steps},
                                        {"final_loss", summary.final_loss},
                                        {"total_seconds", summary.total_seconds},
                                        {"checkpoint_hash", hash_hex(policy::checkpoint_hash(model))}});
  out << "train " << trainer::to_string(settings.objective) << ": " << summary.steps << " steps, final loss "
      << util::format_double(summary.final_loss) << ", checkpoint " << (dir / "model.ckpt").string() << '\n';
}

void cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const fs::path checkpoint = require(cfg, "checkpoint");
  const auto split = data::parse_split(cfg.get("split"));
  const bool true_labels = cfg.flag("true_labels");
  const auto model = policy::load_checkpoint(checkpoint);
  const auto ds = load_data(cfg);
  const double acc = data::reward_accuracy(model, ds, split, true_labels);

  fs::path dir = cfg.get("out_dir");
  if (dir.empty()) dir = checkpoint.has_parent_path() ? checkpoint.parent_path() : fs::path(".");
  fs::create_directories(dir);
  cfg.save(dir / "eval_config.txt");
  write_json(dir / "eval_summary.json",
             json{{"command", "eval"},
                  {"checkpoint", checkpoint.string()},
                  {"checkpoint_hash", hash_hex(policy::checkpoint_hash(model))},
                  {"dataset", cfg.get("dataset")},
                  {"split", cfg.get("split")},
                  {"true_labels", true_labels},
                  {"pairs", split == data::Split::Train ? ds.train.size() : ds.test.size()},
                  {"reward_accuracy", acc}});
  out << util::format_double(acc) << '\n';
}

void cmd_valuate(const RunConfig& cfg, std::ostream& out) {
  const auto vc = valuation_config(cfg);
  const auto model = policy::load_checkpoint(require(cfg, "checkpoint"));
  const auto ds = load_data(cfg);
  const auto dir = prepare_dir(cfg);
  cfg.save(dir / "config.txt");

  const auto records = analysis::valuate_dataset(model, ds, vc);
  {
    auto csv = open_out(dir / "valuation.csv");
    analysis::write_valuation_csv(csv, records);
  }
  double sum = 0.0, max_abs = 0.0;
  for (const auto& r : records) {
    sum += r.mean_gap;
    max_abs = std::max(max_abs, std::abs(r.mean_gap));
  }
  write_json(dir / "summary.json", json{{"command", "valuate"},
                                        {"pairs", records.size()},
                                        {"mean_gap", records.empty() ? 0.0 : sum / records.size()},
                                        {"max_abs_gap", max_abs}});
  out << "valuated " << records.size() << " pairs into " << (dir / "valuation.csv").string() << '\n';
}

void cmd_prune(const RunConfig& cfg, std::ostream& out) {
  const auto mode = analysis::parse_subset_mode(cfg.get("mode"));
  const double fraction = cfg.number("fraction");
  const fs::path path = require(cfg, "out");
  const auto ds = load_data(cfg);
  std::ifstream vin(require(cfg, "valuation"));
  if (!vin) throw InputError("cannot read " + cfg.get("valuation"));
  const auto records = analysis::read_valuation_csv(vin);

  const auto subset = analysis::select_subset(records, ds, fraction, mode, cfg.seed());
  ensure_parent(path);
  data::save_dataset(subset, path);
  fs::path config_path = path;
  cfg.save(config_path.replace_extension(".config"));
  out << "kept " << subset.train.size() << " of " << ds.train.size() << " train pairs (" << analysis::to_string(mode)
      << ") in " << path.string() << '\n';
}

void cmd_spectrum(const RunConfig& cfg, std::ostream& out) {
  const auto kind = trainer::parse_objective(cfg.get("method"));
  const auto gc = gapo_config(cfg);
  const long iters = cfg.integer("iters");
  const long probe = cfg.integer("probe_pairs");
  if (iters < 1) throw ConfigError("iters must be at least 1");
  if (probe < 1) throw ConfigError("probe_pairs must be at least 1");
  std::optional<policy::ReferenceModel> reference;
  if (!cfg.get("reference").empty()) {
    reference.emplace(policy::freeze_reference(policy::load_checkpoint(cfg.get("reference"))));
  } else if (kind == trainer::ObjectiveKind::Dpo) {
    throw ConfigError("method dpo requires --reference <checkpoint>");
  }
  auto model = policy::load_checkpoint(require(cfg, "checkpoint"));
  const auto ds = load_data(cfg);
  if (ds.train.empty()) throw InputError("spectrum: the dataset has no train pairs");
  const auto dir = prepare_dir(cfg);
  cfg.save(dir / "config.txt");

  const std::vector<objectives::PreferencePair> batch(
      ds.train.begin(), ds.train.begin() + std::min<std::size_t>(static_cast<std::size_t>(probe), ds.train.size()));
  std::vector<double> anchors;
  diff::Objective f;
  switch (kind) {
    case trainer::ObjectiveKind::Gapo: {
      for (const auto& r : objectives::anchor_records(model, batch, gc)) anchors.push_back(r.anchor_margin);
      f = objectives::gapo_objective(model, batch, anchors, gc.beta, gc.gamma);
      break;
    }
    case trainer::ObjectiveKind::Dpo:
      f = objectives::dpo_objective(model, *reference, batch, gc.beta);
      break;
    case trainer::ObjectiveKind::Simpo:
    case trainer::ObjectiveKind::SimpoSam:
      f = objectives::simpo_objective(model, batch, gc.beta, gc.gamma);
      break;
  }
  const auto dim = gc.scope.indices(model.params().layout()).size();
  if (static_cast<std::size_t>(iters) > dim) {
    throw ConfigError("iters " + std::to_string(iters) + " exceeds the scope dimension " + std::to_string(dim));
  }
  auto report = analysis::lanczos_spectrum(f, model.params(), gc.scope, static_cast<int>(iters), cfg.seed());
  report.objective = trainer::to_string(kind);
  report.checkpoint = hash_hex(policy::checkpoint_hash(model));
  {
    auto csv = open_out(dir / "spectrum.csv");
    analysis::write_spectrum_csv(csv, report);
  }
  write_json(dir / "summary.json", json{{"command", "spectrum"},
                                        {"objective", report.objective},
                                        {"checkpoint_hash", report.checkpoint},
                                        {"scope", report.scope.describe()},
                                        {"dimension", dim},
                                        {"iterations", report.iterations},
                                        {"breakdown", report.breakdown},
                                        {"hvp_mode", report.hvp_mode},
                                        {"ritz_values", report.ritz_values}});
  for (double v : report.ritz_values) out << util::format_double(v) << '\n';
}

// ----- sweep -----

namespace {

struct Cell {
  std::string method;
  std::string kind;
  double rate = 0.0;
  long seed = 0;

  std::string name() const {
    return method + "-" + kind + "-r" + util::format_double(rate) + "-s" + std::to_string(seed);
  }
  auto key() const { return std::tie(method, kind, rate, seed); }
};

RunConfig cell_config(const RunConfig& base, const Cell& c) {
  RunConfig cfg = base;
  cfg.set("method", c.method);
  cfg.set("seed", std::to_string(c.seed));
  cfg.set("flip_random", c.kind == "random" ? util::format_double(c.rate) : "0");
  cfg.set("flip_length", c.kind == "length" ? util::format_double(c.rate) : "0");
  return cfg;
}

// A cell counts as done only if its result file parses and matches the cell.
std::optional<double> completed_accuracy(const fs::path& result, const Cell& c) {
  std::ifstream in(result);
  if (!in) return std::nullopt;
  try {
    const json j = json::parse(in);
    if (j.at("method") != c.method || j.at("kind") != c.kind || j.at("rate").get<double>() != c.rate ||
        j.at("seed").get<long>() != c.seed) {
      return std::nullopt;
    }
    return j.at("test_accuracy").get<double>();
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  const auto methods = cfg.list("methods");
  const auto kinds = cfg.list("kinds");
  const auto rates = cfg.numbers("rates");
  const auto seeds = cfg.numbers("seeds");
  const long jobs = cfg.integer("jobs");
  if (methods.empty() || kinds.empty() || rates.empty() || seeds.empty()) {
    throw ConfigError("sweep needs non-empty methods, kinds, rates and seeds");
  }
  if (jobs < 1) throw ConfigError("jobs must be at least 1");

  std::vector<Cell> cells;
  for (const auto& m : methods) {
    for (const auto& k : kinds) {
      if (k != "random" && k != "length") throw ConfigError("unknown noise kind '" + k + "'");
      for (double r : rates) {
        for (double s : seeds) {
          if (s < 0 || s != static_cast<double>(static_cast<long>(s))) {
            throw ConfigError("seeds must be non-negative integers");
          }
          cells.push_back({m, k, r, static_cast<long>(s)});
        }
      }
    }
  }
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.key() < b.key(); });
  // Validate every cell's settings before any work starts.
  for (const auto& c : cells) {
    const auto cc = cell_config(cfg, c);
    train_settings(cc);
    corpus_config(cc);
    sft_config(cc);
    sft_corpus({}, cc.get("sft_responses"));
    if (c.rate < 0.0 || c.rate > 1.0) throw ConfigError("rates must be in [0, 1]");
  }

  const auto dir = prepare_dir(cfg);
  cfg.save(dir / "config.txt");

  std::vector<std::optional<double>> accuracy(cells.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    accuracy[i] = completed_accuracy(dir / "cells" / cells[i].name() / "result.json", cells[i]);
    if (!accuracy[i]) pending.push_back(i);
  }

  std::vector<std::string> failures(cells.size());
  const long n_pending = static_cast<long>(pending.size());
#pragma omp parallel for schedule(dynamic) num_threads(static_cast<int>(jobs))
  for (long p = 0; p < n_pending; ++p) {
    const auto& c = cells[pending[p]];
    try {
      const auto cc = cell_config(cfg, c);
      const auto cell_dir = dir / "cells" / c.name();
      fs::create_directories(cell_dir);
      fs::remove(cell_dir / "result.json");
      cc.save(cell_dir / "config.txt");
      const auto r = run_cell(cc);
      write_json(cell_dir / "result.json", json{{"method", c.method},
                                                {"kind", c.kind},
                                                {"rate", c.rate},
                                                {"seed", c.seed},
                                                {"test_accuracy", r.test_accuracy},
                                                {"steps", r.steps},
                                                {"final_loss", r.final_loss},
                                                {"checkpoint_hash", r.checkpoint_hash}});
      accuracy[pending[p]] = r.test_accuracy;
    } catch (const std::exception& e) {
      failures[pending[p]] = e.what();
    }
  }

  {
    auto csv = open_out(dir / "sweep.csv");
    csv << "method,kind,rate,seed,test_accuracy\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!accuracy[i]) continue;
      csv << cells[i].method << ',' << cells[i].kind << ',' << util::format_double(cells[i].rate) << ','
          << cells[i].seed << ',' << util::format_double(*accuracy[i]) << '\n';
    }
  }
  {
    std::map<std::tuple<std::string, std::string, double>, std::vector<double>> groups;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (accuracy[i]) groups[{cells[i].method, cells[i].kind, cells[i].rate}].push_back(*accuracy[i]);
    }
    auto csv = open_out(dir / "sweep_medians.csv");
    csv << "method,kind,rate,cells,median_test_accuracy\n";
    for (const auto& [k, v] : groups) {
      csv << std::get<0>(k) << ',' << std::get<1>(k) << ',' << util::format_double(std::get<2>(k)) << ','
          << v.size() << ',' << util::format_double(median_of(v)) << '\n';
    }
  }

  out << "sweep: " << cells.size() << " cells, " << pending.size() << " run, " << cells.size() - pending.size()
      << " already complete\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!failures[i].empty()) throw Error("sweep cell " + cells[i].name() + " failed: " + failures[i]);
  }
}

// ----- dispatch -----

namespace {

struct Command {
  std::string name;
  std::string help;
  void (*fn)(const RunConfig&, std::ostream&);
  std::vector<std::string> keys;
};

const std::vector<std::string> kCorpusKeys = {"seed",       "vocab",        "pairs",        "test_fraction",
                                              "length_bias", "prompt_min",  "prompt_max",   "response_min",
                                              "response_max", "semantic",   "flip_random",  "flip_length",
                                              "flip_seed"};
const std::vector<std::string> kModelKeys = {"arch", "vocab", "window", "embed", "hidden"};
const std::vector<std::string> kGapoKeys = {"beta", "gamma", "rho", "strategy", "scope", "direction"};
const std::vector<std::string> kOptKeys = {"optimizer", "lr", "batch_size"};

std::vector<std::string> join(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) {
    for (const auto& k : p) {
      if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
    }
  }
  return out;
}

const std::vector<Command>& commands() {
  static const std::vector<Command> cmds = {
      {"gen", "generate a synthetic preference dataset", &cmd_gen, join({{"out"}, kCorpusKeys})},
      {"sft", "supervised fine-tuning on the train split", &cmd_sft,
       join({{"dataset", "out_dir", "init", "seed", "sft_epochs", "sft_responses"}, kModelKeys, kOptKeys})},
      {"train", "preference training (gapo, dpo, simpo, simpo_sam)", &cmd_train,
       join({{"dataset", "out_dir", "init", "reference", "seed", "method", "epochs"}, kModelKeys, kGapoKeys,
             kOptKeys})},
      {"eval", "reward accuracy of a checkpoint", &cmd_eval,
       {"checkpoint", "dataset", "split", "true_labels", "out_dir"}},
      {"valuate", "mean anchor gap of every train pair", &cmd_valuate,
       join({{"checkpoint", "dataset", "out_dir", "seed", "passes", "batch_size"}, kGapoKeys})},
      {"prune", "select a train subset from a valuation", &cmd_prune,
       {"dataset", "valuation", "mode", "fraction", "seed", "out"}},
      {"spectrum", "Lanczos Ritz values of a loss Hessian", &cmd_spectrum,
       join({{"checkpoint", "dataset", "reference", "out_dir", "seed", "method", "iters", "probe_pairs"}, kGapoKeys})},
      {"sweep", "noise-robustness grid: methods x kinds x rates x seeds", &cmd_sweep,
       join({{"out_dir", "methods", "kinds", "rates", "seeds", "jobs", "sft_epochs", "sft_responses", "epochs"},
             kCorpusKeys, kModelKeys, kGapoKeys, kOptKeys})},
  };
  return cmds;
}

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

std::string key_help(const std::string& key) {
  for (const auto& k : RunConfig::keys()) {
    if (k.name == key) return k.help + (k.default_value.empty() ? "" : " [" + k.default_value + "]");
  }
  return "";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"gapo: geometric anchor preference optimization lab"};
  app.name("gapo");
  app.require_subcommand(1);

  struct Bound {
    CLI::App* sub;
    const Command* cmd;
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
  };
  std::vector<Bound> bound(commands().size());
  for (std::size_t i = 0; i < commands().size(); ++i) {
    auto& b = bound[i];
    b.cmd = &commands()[i];
    b.sub = app.add_subcommand(b.cmd->name, b.cmd->help);
    b.sub->add_option("--config", b.config_file, "key=value config file; flags override its values")->type_name("FILE");
    for (const auto& key : b.cmd->keys) {
      b.options[key] = b.sub->add_option(flag_name(key), b.values[key], key_help(key))->type_name("VALUE");
    }
  }

  std::vector<const char*> argv{"gapo"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  for (auto& b : bound) {
    if (!b.sub->parsed()) continue;
    try {
      RunConfig cfg;
      if (!b.config_file.empty()) cfg.load_file(b.config_file);
      for (const auto& [key, opt] : b.options) {
        if (opt->count() > 0) cfg.set(key, b.values[key]);
      }
      b.cmd->fn(cfg, out);
      return kExitOk;
    } catch (const ConfigError& e) {
      err << "gapo " << b.cmd->name << ": config error: " << e.what() << '\n';
      return kExitConfig;
    } catch (const std::exception& e) {
      err << "gapo " << b.cmd->name << ": error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }
  return kExitConfig;
}

}  // namespace gapo::cli
