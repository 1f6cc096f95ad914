#pragma once

#include <string>

#include "tfill/tensor.hpp"

namespace tfill {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Image tensor [B,3,H,W] in [0,1] paired with a binary visibility mask
/// [B,1,H,W] (1 = visible). Masked pixels are zeroed at ingestion.
struct MaskedImage {
  Tensor image;
  Tensor mask;

  int batch() const { return image.dim(0); }
  int height() const { return image.dim(2); }
  int width() const { return image.dim(3); }
};

/// Zeroes out masked pixels and validates the invariants (shape alignment,
/// mask strictly binary, image range [0,1]).
MaskedImage make_masked(const Tensor& image, const Tensor& mask);

/// Expands a [B,1,H,W] mask to [B,C,H,W] as a plain constant tensor.
Tensor expand_mask_channels(const Tensor& mask, int channels);

/// 1 - mask, as a plain constant tensor.
Tensor invert_mask(const Tensor& mask);

// PNG I/O. Images are [3,H,W] (read) / [1|3,H,W] or [H,W] (write), values in
// [0,1]; 8-bit channels on disk.
Tensor read_png(const std::string& path);
void write_png(const std::string& path, const Tensor& image);

// PGM (P5) masks: 0 = masked, 255 = visible. Values >= 128 load as visible.
Tensor read_pgm_mask(const std::string& path);
void write_pgm_mask(const std::string& path, const Tensor& mask);

/// Plain bilinear resample to an arbitrary size (dataset ingestion only;
/// never on the tape).
Tensor resample_image(const Tensor& image, int out_h, int out_w);

}  // namespace tfill
