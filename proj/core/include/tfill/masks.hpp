#pragma once

#include <cstdint>

#include "tfill/rng.hpp"
#include "tfill/tensor.hpp"

namespace tfill {

struct MaskSpec {
  enum class Kind { Center, Freeform };
  Kind kind = Kind::Freeform;
  int height = 64, width = 64;
  double ratio_min = 0.2, ratio_max = 0.3;  // target masked-area fraction
  int strokes_min = 1, strokes_max = 4;
  int width_min = 3, width_max = 10;   // stroke thickness in pixels
  int length_min = 4, length_max = 20; // walk steps per stroke
  std::uint64_t seed = 0;
};

/// Binary mask [1,H,W] (1 = visible) plus the realized masked-area ratio,
/// which equals mean(1 - mask) exactly.
struct GeneratedMask {
  Tensor mask;
  double ratio = 0.0;
};

/// Centered rectangle of h/2 x w/2 masked; quarter area, symmetric under
/// 180-degree rotation.
GeneratedMask generate_center_mask(int h, int w);

/// Random-walk strokes rasterized as masked disks; the whole mask is
/// resampled until the realized ratio lands in [ratio_min, ratio_max]
/// (error after 100 attempts). Deterministic given spec.seed.
GeneratedMask generate_freeform_mask(const MaskSpec& spec);
GeneratedMask generate_freeform_mask(const MaskSpec& spec, Rng& rng);

GeneratedMask generate_mask(const MaskSpec& spec);

}  // namespace tfill
