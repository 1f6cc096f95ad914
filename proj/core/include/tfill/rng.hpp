#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tfill/tensor.hpp"

namespace tfill {

/// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so
/// that streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Inclusive integer range.
  std::int64_t randint(std::int64_t lo, std::int64_t hi);

  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Tensor normal_tensor(Shape shape, double mean, double stddev, bool requires_grad = false);
  Tensor uniform_tensor(Shape shape, double lo, double hi, bool requires_grad = false);

  /// Fisher-Yates shuffle.
  void shuffle(std::vector<int>& v);

  /// Derives an independent child seed; used to give each sub-component its
  /// own stream.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a over arbitrary bytes; used for filename-hash dataset splits and
/// checkpoint checksums.
std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace tfill
