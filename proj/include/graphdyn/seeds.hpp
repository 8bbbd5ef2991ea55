#pragma once

#include <cstdint>
#include <string_view>

namespace graphdyn {

/// SplitMix64 finalizer; used to derive independent RNG streams.
constexpr std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ (stream * 0xd1b54a32d192ed03ULL));
}

constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Named stream, e.g. derive_seed(base, "train-graph").
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  return derive_seed(seed, fnv1a(name));
}

}  // namespace graphdyn
