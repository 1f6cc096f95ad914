#pragma once

#include "tfill/tensor.hpp"

namespace tfill {

// Pixel-level quality metrics over images normalized to [0,1]. Inputs are
// [C,H,W] or [B,C,H,W] with matching shapes.

/// Mean absolute error.
double metric_l1(const Tensor& a, const Tensor& b);

/// 10*log10(1/MSE); 99 dB when MSE < 1e-10.
double metric_psnr(const Tensor& a, const Tensor& b);

/// SSIM with an 11x11 Gaussian window (sigma 1.5), C1=(0.01)^2, C2=(0.03)^2,
/// valid-window convolution, averaged over channels.
double metric_ssim(const Tensor& a, const Tensor& b);

}  // namespace tfill
