#include "tfill/metrics.hpp"

#include <array>
#include <cmath>

namespace tfill {

namespace {

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  constexpr double sigma = 1.5;
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    double d = i - (kWindow - 1) / 2.0;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Separable Gaussian blur, valid region only: output (H-10)x(W-10).
std::vector<double> blur_valid(const double* img, int h, int w) {
  static const std::array<double, kWindow> kKernel = gaussian_window();
  int oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += kKernel[static_cast<std::size_t>(k)] * img[r * w + c + k];
      tmp[static_cast<std::size_t>(r) * ow + c] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += kKernel[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(r + k) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = s;
    }
  }
  return out;
}

}  // namespace

double metric_l1(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "metric_l1");
  const auto& av = a.data();
  const auto& bv = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += std::fabs(av[i] - bv[i]);
  return s / static_cast<double>(av.size());
}

double metric_psnr(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "metric_psnr");
  const auto& av = a.data();
  const auto& bv = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    double d = av[i] - bv[i];
    s += d * d;
  }
  double mse = s / static_cast<double>(av.size());
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

double metric_ssim(const Tensor& a, const Tensor& b) {
  check_pair(a, b, "metric_ssim");
  if (a.rank() < 3) throw ShapeError("metric_ssim: expected [C,H,W] or [B,C,H,W]");
  int h = a.dim(-2), w = a.dim(-1);
  if (h < kWindow || w < kWindow) {
    throw ShapeError("metric_ssim: image smaller than the 11x11 window");
  }
  std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::int64_t channels = a.numel() / plane;
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;

  const auto& av = a.data();
  const auto& bv = b.data();
  double total = 0.0;
  std::vector<double> prod(static_cast<std::size_t>(plane));
  std::vector<double> asq(static_cast<std::size_t>(plane));
  std::vector<double> bsq(static_cast<std::size_t>(plane));
  for (std::int64_t ch = 0; ch < channels; ++ch) {
    const double* ap = &av[static_cast<std::size_t>(ch * plane)];
    const double* bp = &bv[static_cast<std::size_t>(ch * plane)];
    for (std::int64_t i = 0; i < plane; ++i) {
      prod[static_cast<std::size_t>(i)] = ap[i] * bp[i];
      asq[static_cast<std::size_t>(i)] = ap[i] * ap[i];
      bsq[static_cast<std::size_t>(i)] = bp[i] * bp[i];
    }
    auto mu_a = blur_valid(ap, h, w);
    auto mu_b = blur_valid(bp, h, w);
    auto m_aa = blur_valid(asq.data(), h, w);
    auto m_bb = blur_valid(bsq.data(), h, w);
    auto m_ab = blur_valid(prod.data(), h, w);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      double ma = mu_a[i], mb = mu_b[i];
      double va = m_aa[i] - ma * ma;
      double vb = m_bb[i] - mb * mb;
      double cov = m_ab[i] - ma * mb;
      acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / static_cast<double>(channels);
}

}  // namespace tfill
