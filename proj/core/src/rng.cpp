#include "tfill/rng.hpp"

#include <cmath>

namespace tfill {

std::int64_t Rng::randint(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ValueError("randint: empty range");
  std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection sampling keeps the distribution exact and the stream portable.
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % span);
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

Tensor Rng::normal_tensor(Shape shape, double mean, double stddev, bool requires_grad) {
  auto n = shape_numel(shape);
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = normal(mean, stddev);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi, bool requires_grad) {
  auto n = shape_numel(shape);
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

void Rng::shuffle(std::vector<int>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(randint(0, static_cast<std::int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer over the pair.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace tfill
