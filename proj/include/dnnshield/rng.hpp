#pragma once

#include <cstdint>
#include <random>

namespace dnnshield {

// Portable seeded generator. The engine is std::mt19937_64, whose output
// sequence is fixed by the C++ standard; the conversions below are defined
// here rather than delegated to <random> distributions, whose algorithms are
// implementation-specific. Keys generated under a seed therefore reproduce
// bit-for-bit on every conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) built from the top 53 bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform double in [low, high).
  double uniform(double low, double high) {
    const double v = low + (high - low) * uniform01();
    return v < high ? v : low;
  }

  // Unbiased uniform integer in [low, high] by rejection on the top bits.
  std::int64_t uniform_int(std::int64_t low, std::int64_t high);

  // Standard normal by the Box-Muller transform (one draw per call).
  double normal();

  // Seed for a derived stream, so independent consumers do not share state.
  std::uint64_t fork() { return engine_() ^ 0x9E3779B97F4A7C15ULL; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dnnshield
