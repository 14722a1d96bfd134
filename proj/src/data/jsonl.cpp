#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "gapo/data/dataset.hpp"
#include "gapo/errors.hpp"

namespace gapo::data {

using nlohmann::json;

namespace {

TokenSeq tokens_from(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw FormatError(line, std::string("field '") + key + "' must be an integer array");
  }
  TokenSeq out;
  for (const auto& t : j.at(key)) {
    if (!t.is_number_integer()) throw FormatError(line, std::string("field '") + key + "' has a non-integer token");
    const auto v = t.get<std::int64_t>();
    if (v < 0 || v > INT32_MAX) throw FormatError(line, std::string("field '") + key + "' has a token out of range");
    out.push_back(static_cast<Token>(v));
  }
  return out;
}

json config_to_json(const CorpusConfig& c) {
  return json{{"vocab", c.vocab},
              {"n_pairs", c.n_pairs},
              {"test_fraction", c.test_fraction},
              {"prompt_min", c.prompt_min},
              {"prompt_max", c.prompt_max},
              {"response_min", c.response_min},
              {"response_max", c.response_max},
              {"semantic", c.semantic},
              {"filler", c.filler},
              {"length_bias", c.length_bias},
              {"seed", c.seed}};
}

CorpusConfig config_from_json(const json& j) {
  CorpusConfig c;
  c.vocab = j.at("vocab").get<int>();
  c.n_pairs = j.at("n_pairs").get<std::size_t>();
  c.test_fraction = j.at("test_fraction").get<double>();
  c.prompt_min = j.at("prompt_min").get<int>();
  c.prompt_max = j.at("prompt_max").get<int>();
  c.response_min = j.at("response_min").get<int>();
  c.response_max = j.at("response_max").get<int>();
  c.semantic = j.at("semantic").get<std::vector<Token>>();
  c.filler = j.at("filler").get<std::vector<Token>>();
  c.length_bias = j.at("length_bias").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void write_jsonl(std::ostream& out, const std::vector<PreferencePair>& pairs) {
  for (const auto& p : pairs) {
    json j{{"pair_id", p.pair_id},
           {"x", p.x},
           {"y_w", p.y_w},
           {"y_l", p.y_l},
           {"true_label_swapped", p.true_label_swapped}};
    out << j.dump() << '\n';
  }
}

std::vector<PreferencePair> read_jsonl(std::istream& in) {
  std::vector<PreferencePair> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw FormatError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw FormatError(line, "expected a JSON object");
    PreferencePair p;
    if (!j.contains("pair_id") || !j.at("pair_id").is_number_integer()) {
      throw FormatError(line, "field 'pair_id' must be an integer");
    }
    p.pair_id = j.at("pair_id").get<std::int64_t>();
    p.x = tokens_from(j, "x", line);
    p.y_w = tokens_from(j, "y_w", line);
    p.y_l = tokens_from(j, "y_l", line);
    if (!j.contains("true_label_swapped") || !j.at("true_label_swapped").is_boolean()) {
      throw FormatError(line, "field 'true_label_swapped' must be a boolean");
    }
    p.true_label_swapped = j.at("true_label_swapped").get<bool>();
    out.push_back(std::move(p));
  }
  return out;
}

std::filesystem::path meta_path(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p.replace_extension(".meta");
  return p;
}

void save_dataset(const PreferenceDataset& ds, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    write_jsonl(out, ds.train);
    write_jsonl(out, ds.test);
    if (!out) throw InputError("write failed for " + path.string());
  }
  json meta{{"n_train", ds.train.size()}, {"n_test", ds.test.size()}, {"noise", json::array()}};
  meta["config"] = ds.config ? config_to_json(*ds.config) : json(nullptr);
  for (const auto& n : ds.noise) {
    meta["noise"].push_back(
        {{"kind", n.kind}, {"rate", n.rate}, {"seed", n.seed}, {"flipped", n.flipped}, {"shortfall", n.shortfall}});
  }
  std::ofstream out(meta_path(path), std::ios::binary);
  if (!out) throw InputError("cannot write " + meta_path(path).string());
  out << meta.dump(2) << '\n';
}

PreferenceDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open dataset " + path.string());
  auto pairs = read_jsonl(in);

  PreferenceDataset ds;
  const auto mpath = meta_path(path);
  if (!std::filesystem::exists(mpath)) {
    ds.train = std::move(pairs);
    return ds;
  }
  std::ifstream min(mpath, std::ios::binary);
  std::stringstream buf;
  buf << min.rdbuf();
  try {
    const json meta = json::parse(buf.str());
    const auto n_train = meta.at("n_train").get<std::size_t>();
    const auto n_test = meta.at("n_test").get<std::size_t>();
    if (n_train + n_test != pairs.size()) {
      throw FormatError(0, mpath.string() + ": split sizes do not match the dataset");
    }
    if (!meta.at("config").is_null()) ds.config = config_from_json(meta.at("config"));
    for (const auto& n : meta.at("noise")) {
      ds.noise.push_back({n.at("kind").get<std::string>(), n.at("rate").get<double>(),
                          n.at("seed").get<std::uint64_t>(), n.at("flipped").get<std::size_t>(),
                          n.at("shortfall").get<std::size_t>()});
    }
    ds.train.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.test.assign(pairs.begin() + static_cast<std::ptrdiff_t>(n_train), pairs.end());
  } catch (const json::exception& e) {
    throw FormatError(0, mpath.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace gapo::data
