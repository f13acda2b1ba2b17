#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "eegc/autograd.hpp"

namespace eegc {

// Self-describing weight container: a version string, a key/value metadata
// block, and ordered named tensors stored as little-endian 64-bit reals.
// Reload is bit-exact.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, ag::TensorPtr>> tensors;
};

inline constexpr const char* kCheckpointMagic = "eegc-checkpoint-v1";

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, ag::TensorPtr>>& tensors,
                     const std::map<std::string, std::string>& meta);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace eegc
