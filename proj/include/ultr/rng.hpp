#pragma once

#include <cstdint>
#include <random>

namespace ultr {

// Every randomized operation draws from its own stream so that adding draws in
// one place never perturbs another.
enum class Stream : std::uint64_t {
  kSplit = 0x5b1f,
  kSimulate = 0x51b0,
  kPolicyWeights = 0x7e16,
  kSyntheticData = 0xda7a,
  kInit = 0x1417,
  kShuffle = 0x5bff,
  kDropout = 0xd20b,
  kRandomBaseline = 0xba5e,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Engine for substream `index` of `stream` under a user seed.
inline std::mt19937_64 substream(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ index);
  return std::mt19937_64(h);
}

inline double uniform01(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace ultr
