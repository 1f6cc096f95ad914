#include "tfill/masks.hpp"

#include <cmath>

namespace tfill {

namespace {

double masked_ratio(const std::vector<double>& mask) {
  double s = 0.0;
  for (double v : mask) s += 1.0 - v;
  return s / static_cast<double>(mask.size());
}

void stamp_disk(std::vector<double>& mask, int h, int w, double cy, double cx, double radius) {
  int r0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  int r1 = std::min(h - 1, static_cast<int>(std::ceil(cy + radius)));
  int c0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  int c1 = std::min(w - 1, static_cast<int>(std::ceil(cx + radius)));
  double rr = radius * radius;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      double dy = r - cy, dx = c - cx;
      if (dy * dy + dx * dx <= rr) mask[static_cast<std::size_t>(r) * w + c] = 0.0;
    }
  }
}

}  // namespace

GeneratedMask generate_center_mask(int h, int w) {
  if (h < 2 || w < 2) throw ValueError("generate_center_mask: size must be at least 2x2");
  std::vector<double> mask(static_cast<std::size_t>(h) * w, 1.0);
  // Row r is masked iff 4r >= h and 4(h-1-r) >= h; the condition is symmetric
  // under r <-> h-1-r, so the mask survives 180-degree rotation. Even sizes
  // give the exact centered h/2 x w/2 quarter-area rectangle.
  for (int r = 0; r < h; ++r) {
    if (4 * r < h || 4 * (h - 1 - r) < h) continue;
    for (int c = 0; c < w; ++c) {
      if (4 * c < w || 4 * (w - 1 - c) < w) continue;
      mask[static_cast<std::size_t>(r) * w + c] = 0.0;
    }
  }
  GeneratedMask out;
  out.ratio = masked_ratio(mask);
  out.mask = Tensor::from_data({1, h, w}, std::move(mask));
  return out;
}

GeneratedMask generate_freeform_mask(const MaskSpec& spec, Rng& rng) {
  if (spec.height < 2 || spec.width < 2) throw ValueError("freeform mask: size too small");
  if (spec.ratio_min > spec.ratio_max || spec.ratio_min < 0.0 || spec.ratio_max > 1.0) {
    throw ValueError("freeform mask: invalid ratio bounds");
  }
  int h = spec.height, w = spec.width;
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<double> mask(static_cast<std::size_t>(h) * w, 1.0);
    int strokes = static_cast<int>(rng.randint(spec.strokes_min, spec.strokes_max));
    for (int s = 0; s < strokes; ++s) {
      double width_px = static_cast<double>(rng.randint(spec.width_min, spec.width_max));
      double radius = width_px / 2.0;
      int steps = static_cast<int>(rng.randint(spec.length_min, spec.length_max));
      double cy = rng.uniform(0.0, static_cast<double>(h - 1));
      double cx = rng.uniform(0.0, static_cast<double>(w - 1));
      double angle = rng.uniform(0.0, 2.0 * M_PI);
      stamp_disk(mask, h, w, cy, cx, radius);
      for (int t = 0; t < steps; ++t) {
        angle += rng.uniform(-0.9, 0.9);
        double dist = rng.uniform(1.0, width_px + 3.0);
        double ny = cy + dist * std::sin(angle);
        double nx = cx + dist * std::cos(angle);
        // walk the segment at unit spacing so thick strokes stay connected
        int sub = std::max(1, static_cast<int>(std::ceil(dist)));
        for (int k = 1; k <= sub; ++k) {
          double f = static_cast<double>(k) / sub;
          stamp_disk(mask, h, w, cy + f * (ny - cy), cx + f * (nx - cx), radius);
        }
        cy = std::min(std::max(ny, 0.0), static_cast<double>(h - 1));
        cx = std::min(std::max(nx, 0.0), static_cast<double>(w - 1));
      }
    }
    double ratio = masked_ratio(mask);
    if (ratio >= spec.ratio_min && ratio <= spec.ratio_max) {
      GeneratedMask out;
      out.ratio = ratio;
      out.mask = Tensor::from_data({1, h, w}, std::move(mask));
      return out;
    }
  }
  throw ValueError("freeform mask: ratio bounds [" + std::to_string(spec.ratio_min) + "," +
                   std::to_string(spec.ratio_max) + "] unreachable after 100 attempts");
}

GeneratedMask generate_freeform_mask(const MaskSpec& spec) {
  Rng rng(Rng::derive(spec.seed, 0x3a5c));
  return generate_freeform_mask(spec, rng);
}

GeneratedMask generate_mask(const MaskSpec& spec) {
  if (spec.kind == MaskSpec::Kind::Center) return generate_center_mask(spec.height, spec.width);
  return generate_freeform_mask(spec);
}

}  // namespace tfill
