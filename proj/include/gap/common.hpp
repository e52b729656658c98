#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace gap {

// The two optimization regimes the framework serves.
enum class Mode { kMssdg, kTtpa };

// Numeric guards, shared by every module so tolerances stay consistent.
inline constexpr double kLogEps = 1e-8;    // floor inside logarithms
inline constexpr double kNormEps = 1e-12;  // floor inside norm denominators
inline constexpr double kStdEps = 1e-5;    // variance guard in feature standardization

// Invalid input or configuration; the CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN, divergence, or a numerically impossible request; CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded RNG with explicit transforms. std::mt19937_64 gives a portable bit
// stream, and the transforms below avoid the implementation-defined
// std::*_distribution wrappers, so identical seeds give identical datasets.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive on both ends.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Box-Muller; draws two uniforms per call so the stream stays predictable.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent substream keyed by `salt`; stable across forks of forks.
  Rng fork(std::uint64_t salt) const {
    return Rng(splitmix64(seed_ ^ splitmix64(salt)));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace gap
