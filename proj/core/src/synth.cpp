#include "tfill/synth.hpp"

#include <cmath>

#include "tfill/rng.hpp"

namespace tfill {

std::vector<Tensor> synth_textures(int count, int size, std::uint64_t seed) {
  if (count < 1 || size < 2) throw ValueError("synth_textures: invalid count or size");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    Rng rng(Rng::derive(seed, 0xda7a0000ull + static_cast<std::uint64_t>(n)));
    struct Grating {
      double fy, fx, phase;
      double amp[3];
    };
    int waves = static_cast<int>(rng.randint(2, 4));
    std::vector<Grating> gs(static_cast<std::size_t>(waves));
    for (auto& g : gs) {
      double cycles = rng.uniform(1.0, 4.0);
      double theta = rng.uniform(0.0, 2.0 * M_PI);
      double k = 2.0 * M_PI * cycles / size;
      g.fy = k * std::sin(theta);
      g.fx = k * std::cos(theta);
      g.phase = rng.uniform(0.0, 2.0 * M_PI);
      for (auto& a : g.amp) a = rng.uniform(0.3, 1.0);
    }
    double blob_cy = rng.uniform(0.2, 0.8) * size;
    double blob_cx = rng.uniform(0.2, 0.8) * size;
    double blob_r = rng.uniform(0.15, 0.4) * size;
    double blob_amp[3] = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    double bias[3] = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};

    std::vector<double> data(static_cast<std::size_t>(3) * size * size);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double blob = std::exp(-((y - blob_cy) * (y - blob_cy) + (x - blob_cx) * (x - blob_cx)) /
                               (2.0 * blob_r * blob_r));
        for (int c = 0; c < 3; ++c) {
          double v = bias[c] + blob_amp[c] * blob;
          for (const auto& g : gs) {
            v += g.amp[c] * std::sin(g.fy * y + g.fx * x + g.phase + 0.7 * c);
          }
          // logistic squash into (0,1)
          data[(static_cast<std::size_t>(c) * size + y) * size + x] = 1.0 / (1.0 + std::exp(-1.2 * v));
        }
      }
    }
    out.push_back(Tensor::from_data({3, size, size}, std::move(data)));
  }
  return out;
}

}  // namespace tfill
