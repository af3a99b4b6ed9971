#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bfr {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index) {
  return mix64(mix64(global_seed) ^ (index * 0xD1B54A32D192ED03ULL));
}

inline constexpr std::uint64_t kFnvBasis = 0xCBF29CE484222325ULL;

/// FNV-1a over bytes, for hashing string ids. Pass a previous result as `h`
/// to continue hashing.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvBasis) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Random stream over std::mt19937_64 (whose output sequence is fixed by the
// standard). Distributions are implemented here because the std:: ones are
// implementation-defined and would break cross-platform replay.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one cached spare).
  double normal();

  /// Zero-mean Laplace with scale b.
  double laplace(double b);

  /// Poisson(lambda) by sequential inversion; exact for lambda up to ~700.
  std::int64_t poisson(double lambda);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bfr
