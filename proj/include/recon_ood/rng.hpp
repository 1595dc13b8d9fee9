#pragma once

#include <cstdint>
#include <random>

namespace recon_ood {

// SplitMix64 finalizer; a bijection on 64-bit words.
std::uint64_t mix64(std::uint64_t x) noexcept;
// Derives an independent stream seed from a base seed and a stream key.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key) noexcept;

/// Seeded generator passed explicitly to everything that draws randomness.
/// Distributions are implemented here rather than with <random> adaptors so
/// that draws are bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace recon_ood
