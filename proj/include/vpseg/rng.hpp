#pragma once

#include <cstdint>

namespace vpseg {

// splitmix64: tiny, seedable, and stable across platforms. Every randomized
// piece of the project (line subsampling, stub weights, scene generation)
// goes through this so runs are bit-reproducible.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant at our scales;
  // determinism is what matters.
  std::uint64_t next_below(std::uint64_t n) {
    return next() % n;
  }

 private:
  std::uint64_t state_;
};

}  // namespace vpseg
