#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace autodml {

// SplitMix64 output function (Steele, Lea & Flood 2014). Pure integer
// arithmetic, so every platform produces the same stream.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for replication `index` of a run seeded with `seed`. Independent of the
// order in which replications are scheduled.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64_mix(seed ^ splitmix64_mix(index + 0x632be59bd9b4e019ULL));
}

// Counter-based generator: draw k is splitmix64_mix(seed + (k + 1) * golden).
// Any draw can be recomputed from (seed, k) alone.
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() {
    ++counter_;
    return splitmix64_mix(seed_ + counter_ * kGolden);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1), never exactly zero.
  double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound);

  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// Fisher-Yates permutation of 0..n-1 driven by `rng`.
std::vector<std::size_t> random_permutation(std::size_t n, CounterRng& rng);

}  // namespace autodml
