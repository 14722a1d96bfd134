#pragma once

// Flat key=value run configuration shared by every gapo subcommand.
//
//   # comment
//   method = gapo
//   rho = 0.05
//
// Every key has a default; unknown keys are rejected with ConfigError.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace gapo::cli {

struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
};

class RunConfig {
 public:
  RunConfig();

  static const std::vector<KeySpec>& keys();
  static bool known(const std::string& key);

  void set(const std::string& key, const std::string& value);
  // Parses key=value lines; `source` names the input in error messages.
  void parse(std::istream& in, const std::string& source);
  void load_file(const std::filesystem::path& path);

  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  long integer(const std::string& key) const;
  std::uint64_t seed() const;
  bool flag(const std::string& key) const;
  // Comma-separated values; empty items are dropped.
  std::vector<std::string> list(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;

  // Every key, sorted, one key=value per line.
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace gapo::cli
