#pragma once

#include <cstdint>
#include <random>

namespace metacal {

/// Mixes a 64-bit value (splitmix64 finalizer). Used to derive independent
/// stream seeds from (seed, iteration, index) tuples.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);

/// Random source with distribution code that does not depend on the standard
/// library implementation, so generated files are identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Standard normal (Box-Muller, both halves used).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace metacal
