#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace sstda {

/// Seeded generator whose derived draws are bit-identical across standard
/// library implementations (the std distributions are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::size_t index(std::size_t n);
  /// Standard normal via Box-Muller.
  double normal();

  /// Independent child stream; `salt` distinguishes siblings.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sstda
