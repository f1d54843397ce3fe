#pragma once

#include <cstdint>
#include <random>

// Deterministic stream derivation: every shot (and every auxiliary task such
// as bootstrap resampling or fit restarts) owns an engine seeded from
// (master seed, stream tag, index) through a SplitMix64 mix. Results are
// therefore independent of how shots are distributed over worker threads.

namespace sipmsim {

using RandomEngine = std::mt19937_64;

namespace stream {
// Tags keep unrelated consumers of the same master seed decorrelated.
inline constexpr std::uint64_t kShot = 0;
inline constexpr std::uint64_t kBootstrap = 1;
inline constexpr std::uint64_t kFit = 2;
inline constexpr std::uint64_t kNoise = 3;
}  // namespace stream

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Engine for stream (seed, tag, index); identical arguments give an
/// identical sequence on every thread and every run.
inline RandomEngine make_stream(std::uint64_t master_seed, std::uint64_t tag,
                                std::uint64_t index) {
  std::uint64_t s = splitmix64(master_seed);
  s = splitmix64(s ^ (0x517cc1b727220a95ull * (tag + 1)));
  s = splitmix64(s ^ (0x2545f4914f6cdd1dull * (index + 1)));
  return RandomEngine(s);
}

inline RandomEngine shot_rng(std::uint64_t master_seed, std::uint64_t shot) {
  return make_stream(master_seed, stream::kShot, shot);
}

/// Uniform draw guaranteed inside (0, 1); safe as a log() argument.
template <class URBG>
double uniform_open(URBG& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(g);
  while (x <= 0.0) x = u(g);
  return x;
}

}  // namespace sipmsim
