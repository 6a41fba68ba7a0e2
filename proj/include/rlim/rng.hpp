#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rlim {

/// Hash-style mixer used to derive independent stream seeds from a master
/// seed. Distinct (master, stream) pairs give uncorrelated engine seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 0x5851f42d4c957f2dULL));
}

/**
 * Deterministic random source. std::mt19937_64 output is fully specified by
 * the standard; all conversions from raw bits happen here because the std
 * distribution objects are implementation-defined and would break run
 * reproducibility across toolchains.
 *
 * Copyable so environment snapshots can carry the generator state by value.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Modulo bias is below 2^-50 for the sizes
  /// used here.
  int uniform_int(int n) { return int(next_u64() % std::uint64_t(n)); }

  /// Standard normal via Box-Muller; one spare kept between calls.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Exp(1) sample.
  double exponential() { return -std::log(1.0 - uniform()); }

  void reseed(std::uint64_t seed) {
    engine_.seed(seed);
    have_spare_ = false;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace rlim
