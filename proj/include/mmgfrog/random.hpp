#pragma once
// Named, counter-derived RNG streams from one master seed.

#include <cstdint>
#include <random>
#include <string_view>

namespace mmgfrog {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of sub-stream `name`, replica `index`. Independent of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ULL;
  return splitmix64(splitmix64(master ^ h) + index);
}

using Rng = std::mt19937_64;

}  // namespace mmgfrog
