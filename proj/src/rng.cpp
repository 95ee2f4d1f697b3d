#include "dnnshield/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "dnnshield/errors.hpp"

namespace dnnshield {

std::int64_t Rng::uniform_int(std::int64_t low, std::int64_t high) {
  if (high < low) throw ParameterError("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(high - low) + 1;
  if (span == 0) return static_cast<std::int64_t>(engine_());
  // Largest multiple of span that fits, to reject the biased tail.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % span);
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return low + static_cast<std::int64_t>(draw % span);
}

double Rng::normal() {
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace dnnshield
