#pragma once

#include <cstdint>
#include <random>

namespace earl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable stream identifiers so results do not depend on thread scheduling.
enum class Stream : std::uint64_t {
  sampler = 1,
  estimator = 2,
  resample = 3,
  share = 4,
  job_state = 5,
  generator = 6,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream s, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(s)));
  h = splitmix64(h ^ splitmix64(a + 0x51ed270b0a9fd6e1ULL));
  h = splitmix64(h ^ splitmix64(b + 0x9f34a7b8c2d104e3ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, Stream s, std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed(seed, s, a, b));
}

}  // namespace earl
