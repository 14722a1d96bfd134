#pragma once

// The gapo command-line front end. Exit codes: 0 success, 1 runtime error,
// 2 configuration error.

#include <iosfwd>
#include <string>
#include <vector>

#include "gapo/cli/run_config.hpp"

namespace gapo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// args excludes the program name, e.g. {"train", "--method", "gapo"}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// The subcommands on an already resolved config. They throw ConfigError for
// missing or invalid keys and other gapo::Error types at run time.
void cmd_gen(const RunConfig& cfg, std::ostream& out);
void cmd_sft(const RunConfig& cfg, std::ostream& out);
void cmd_train(const RunConfig& cfg, std::ostream& out);
void cmd_eval(const RunConfig& cfg, std::ostream& out);
void cmd_valuate(const RunConfig& cfg, std::ostream& out);
void cmd_prune(const RunConfig& cfg, std::ostream& out);
void cmd_spectrum(const RunConfig& cfg, std::ostream& out);
void cmd_sweep(const RunConfig& cfg, std::ostream& out);

}  // namespace gapo::cli
