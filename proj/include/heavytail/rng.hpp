#pragma once

// Counter-based SplitMix64 streams.
//
// Output i of a stream is mix(key + i * golden), so a stream is a pure
// function of (key, counter) and sub-streams are keyed by hashing the parent
// key with an identifier. Trial t of an experiment always sees the same
// numbers no matter which thread runs it.

#include <cstdint>
#include <limits>
#include <random>

namespace heavytail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t splitmix_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed = 0) : key_(splitmix_mix(seed ^ 0x6A09E667F3BCC909ULL)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix_mix(key_ + (++counter_) * kGolden); }

  /// Independent child stream identified by `id`.
  CounterRng substream(std::uint64_t id) const {
    CounterRng child;
    child.key_ = splitmix_mix(key_ ^ splitmix_mix(id + 0xD1B54A32D192ED03ULL));
    return child;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Standard normal via std::normal_distribution on this engine.
  double normal() { return normal_(*this); }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{};
};

}  // namespace heavytail
