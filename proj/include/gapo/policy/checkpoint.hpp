#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "gapo/policy/policy_model.hpp"

namespace gapo::policy {

// Text checkpoint: a header with the arch tag, V, window, embed and hidden
// widths, then the segment table, then one value per line in shortest
// round-trip form. Reading back yields bit-identical parameters.
//
//   gapo-checkpoint 1
//   arch mlp-lm
//   vocab 16
//   window 12
//   embed 8
//   hidden 16
//   segments 3
//   segment embed 0 136
//   ...
//   values 1960
//   0.12345
//   ...
void write_checkpoint(const PolicyModel& model, std::ostream& out);
void save_checkpoint(const PolicyModel& model, const std::filesystem::path& path);
PolicyModel read_checkpoint(std::istream& in);
PolicyModel load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the shape and the raw parameter bytes.
std::uint64_t checkpoint_hash(const PolicyModel& model);

}  // namespace gapo::policy
