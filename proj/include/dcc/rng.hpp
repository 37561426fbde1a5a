#pragma once

#include <cstdint>
#include <random>

namespace dcc {

// Seeded random stream. Child streams are derived from (seed, key) with a
// SplitMix64 finalizer, so a given stream depends only on its derivation
// path and never on how many draws a sibling stream has consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }

  Rng split(std::uint64_t key) const { return Rng(mix(seed_ ^ mix(key + 0x632be59bd9b4e019ULL))); }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  std::mt19937_64& engine() { return engine_; }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// Stable stream keys so call sites don't collide.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kAugment = 3;
inline constexpr std::uint64_t kDropout = 4;
inline constexpr std::uint64_t kData = 5;
inline constexpr std::uint64_t kAttack = 6;
inline constexpr std::uint64_t kCorruption = 7;
inline constexpr std::uint64_t kGradcheck = 8;
}  // namespace streams

}  // namespace dcc
