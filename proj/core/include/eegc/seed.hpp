#pragma once

#include <cstdint>
#include <string_view>

namespace eegc {

// FNV-1a over the tag, folded with the base seed. Used to hand every
// experiment cell, mask, and init its own stream: adding cells never
// perturbs the seeds of existing ones.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](unsigned char byte) {
    h ^= byte;
    h *= 1099511628211ull;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(base >> (8 * i)));
  for (char c : tag) mix(static_cast<unsigned char>(c));
  // splitmix64 finalizer so nearby tags land far apart
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

}  // namespace eegc
