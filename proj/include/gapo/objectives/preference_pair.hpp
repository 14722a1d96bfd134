#pragma once

#include <cstdint>

#include "gapo/policy/policy_model.hpp"

namespace gapo::objectives {

using policy::TokenSeq;

struct PreferencePair {
  TokenSeq x;
  TokenSeq y_w;  // chosen, as currently labelled
  TokenSeq y_l;  // rejected, as currently labelled
  bool true_label_swapped = false;  // set when noise swapped y_w and y_l
  std::int64_t pair_id = 0;

  bool operator==(const PreferencePair&) const = default;
};

// Throws InputError when a response is empty or y_w == y_l.
void validate_pair(const PreferencePair& pair);

// Returns the pair with y_w and y_l exchanged and the swap flag toggled.
PreferencePair swapped(const PreferencePair& pair);

}  // namespace gapo::objectives
