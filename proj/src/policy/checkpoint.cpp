#include "gapo/policy/checkpoint.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "gapo/errors.hpp"

namespace gapo::policy {

namespace {

constexpr const char* kMagic = "gapo-checkpoint";
constexpr int kVersion = 1;

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::string next() {
    std::string line;
    if (!std::getline(in_, line)) throw FormatError(line_ + 1, "unexpected end of checkpoint");
    ++line_;
    return line;
  }

  // Reads "key value" and returns value.
  std::string field(const std::string& key) {
    std::istringstream ss(next());
    std::string k, v;
    if (!(ss >> k >> v) || k != key) throw FormatError(line_, "expected field '" + key + "'");
    return v;
  }

  long integer(const std::string& key) {
    const std::string v = field(key);
    long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw FormatError(line_, "bad integer for " + key);
    return out;
  }

  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

}  // namespace

void write_checkpoint(const PolicyModel& model, std::ostream& out) {
  const auto& s = model.shape();
  out << kMagic << ' ' << kVersion << '\n'
      << "arch " << to_string(s.arch) << '\n'
      << "vocab " << s.vocab << '\n'
      << "window " << s.window << '\n'
      << "embed " << s.embed << '\n'
      << "hidden " << s.hidden << '\n';
  const auto& layout = model.params().layout();
  out << "segments " << layout.size() << '\n';
  for (const auto& seg : layout) {
    out << "segment " << seg.name << ' ' << seg.offset << ' ' << seg.length << '\n';
  }
  const auto values = model.params().values();
  out << "values " << values.size() << '\n';
  char buf[64];
  for (double v : values) {
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.write(buf, p - buf);
    out.put('\n');
  }
}

void save_checkpoint(const PolicyModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(model, out);
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

PolicyModel read_checkpoint(std::istream& in) {
  LineReader r(in);
  {
    std::istringstream head(r.next());
    std::string magic;
    int version = 0;
    if (!(head >> magic >> version) || magic != kMagic) throw FormatError(1, "not a gapo checkpoint");
    if (version != kVersion) throw FormatError(1, "unsupported checkpoint version");
  }
  ModelShape shape;
  try {
    shape.arch = parse_arch(r.field("arch"));
  } catch (const ConfigError& e) {
    throw FormatError(r.line(), e.what());
  }
  shape.vocab = static_cast<int>(r.integer("vocab"));
  shape.window = static_cast<int>(r.integer("window"));
  shape.embed = static_cast<int>(r.integer("embed"));
  shape.hidden = static_cast<int>(r.integer("hidden"));

  const long n_segments = r.integer("segments");
  if (n_segments <= 0) throw FormatError(r.line(), "checkpoint has no segments");
  diff::Layout layout;
  for (long i = 0; i < n_segments; ++i) {
    std::istringstream ss(r.next());
    std::string tag;
    diff::Segment seg;
    if (!(ss >> tag >> seg.name >> seg.offset >> seg.length) || tag != "segment") {
      throw FormatError(r.line(), "malformed segment entry");
    }
    layout.push_back(seg);
  }
  const long n_values = r.integer("values");
  if (n_values < 0) throw FormatError(r.line(), "negative value count");
  std::vector<double> values(static_cast<std::size_t>(n_values));
  for (auto& v : values) {
    const std::string line = r.next();
    auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || p != line.data() + line.size()) {
      throw FormatError(r.line(), "malformed parameter value");
    }
  }
  try {
    return PolicyModel(shape, diff::ParamVector(std::move(values), std::move(layout)));
  } catch (const InputError& e) {
    throw FormatError(0, std::string("inconsistent checkpoint: ") + e.what());
  }
}

PolicyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  return read_checkpoint(in);
}

std::uint64_t checkpoint_hash(const PolicyModel& model) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  const auto& s = model.shape();
  const int dims[] = {static_cast<int>(s.arch), s.vocab, s.window, s.embed, s.hidden};
  mix(dims, sizeof(dims));
  const auto values = model.params().values();
  mix(values.data(), values.size() * sizeof(double));
  return h;
}

}  // namespace gapo::policy
