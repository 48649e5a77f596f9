#pragma once

#include <cstdint>
#include <random>

namespace sam {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; mixes a base seed with a stream index so that
/// independent consumers (layers, images, epochs) get decorrelated seeds.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Stream ids for parameter initialization.
inline constexpr std::uint64_t kHeadStream = 1000;
inline constexpr std::uint64_t kProjectionStream = 2000;
inline constexpr std::uint64_t kBankStream = 3000;

}  // namespace sam
