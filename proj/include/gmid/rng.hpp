#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gmid {

// Counter-based seed splitting: every random component draws from its own
// substream keyed by (seed, substream id), so adding a component never
// shifts the draws of another.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream * 0xD1B54A32D192ED03ULL + 1));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(substream_seed(seed, stream));
}

// Fixed substream ids; append new ones, never renumber.
namespace stream {
inline constexpr std::uint64_t covariate_x1 = 1;
inline constexpr std::uint64_t covariate_x2 = 2;
inline constexpr std::uint64_t discrepancy = 3;
inline constexpr std::uint64_t measurement_noise = 4;
inline constexpr std::uint64_t missing_mask = 5;
inline constexpr std::uint64_t network_init = 6;
inline constexpr std::uint64_t sampler = 7;
}  // namespace stream

// Uniform integer in [0, bound) by rejection; bound > 0.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t bound) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % bound;
}

// Box-Muller keeps draws identical across standard library implementations.
class NormalSampler {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01(rng);
    } while (u1 <= 0.0);
    const double u2 = uniform01(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  static double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gmid
