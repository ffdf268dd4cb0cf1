#pragma once

#include <cstdint>
#include <initializer_list>

namespace bfl {

/// Derives an independent 64-bit stream seed from a master seed and a tuple
/// of tags (splitmix64 chaining). Identical inputs give identical seeds on
/// every platform, regardless of call order or thread schedule.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(master);
  for (std::uint64_t t : tags) h = mix(h ^ mix(t));
  return h;
}

// Stream tags.
namespace stream {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kClientTraining = 4;
inline constexpr std::uint64_t kEvaluation = 5;
inline constexpr std::uint64_t kIncremental = 6;
}  // namespace stream

}  // namespace bfl
