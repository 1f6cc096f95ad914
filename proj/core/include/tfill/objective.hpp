#pragma once

#include <cstdint>
#include <vector>

#include "tfill/params.hpp"
#include "tfill/rng.hpp"
#include "tfill/tensor.hpp"

namespace tfill {

struct DiscriminatorConfig {
  int base_width = 24;
  int stages = 4;  // stride-2 conv stack, then mean pool + linear logit
};

struct DiscriminatorStage {
  Tensor conv_w, conv_b;
};

struct DiscriminatorParams {
  DiscriminatorConfig config;
  std::vector<DiscriminatorStage> stages;
  Tensor head_w, head_b;
};

DiscriminatorParams init_discriminator(const DiscriminatorConfig& config, Rng& rng,
                                       ParamStore& store, const std::string& prefix);

/// One real logit per image, [B,1].
Tensor discriminator_logits(const Tensor& images, const DiscriminatorParams& params);

/// Fixed random 3-level conv pyramid standing in for pretrained features.
/// Parameters are frozen (requires_grad = false) and fully determined by the
/// seed.
struct PerceptualExtractor {
  std::uint64_t seed = 0;
  std::vector<Tensor> conv_w, conv_b;

  static PerceptualExtractor create(std::uint64_t seed);
  std::vector<Tensor> features(const Tensor& x) const;
};

/// Mean absolute error.
Tensor pixel_loss(const Tensor& gen, const Tensor& gt);
/// Sum over pyramid levels of mean absolute feature difference.
Tensor perceptual_loss(const Tensor& gen, const Tensor& gt, const PerceptualExtractor& ext);

/// Non-saturating logistic pair: g = softplus(-D(fake)),
/// d = softplus(-D(real)) + softplus(D(fake)); both batch means.
struct GanLossPair {
  Tensor g_loss;
  Tensor d_loss;
};
GanLossPair gan_losses(const DiscriminatorParams& d, const Tensor& real, const Tensor& fake);

Tensor gan_generator_loss(const Tensor& fake_logits);
Tensor gan_discriminator_loss(const Tensor& real_logits, const Tensor& fake_logits);

struct LossWeights {
  double pixel = 1.0;
  double perceptual = 1.0;
  double gan = 1.0;
};

Tensor total_loss(const Tensor& pixel, const Tensor& perceptual, const Tensor& gan,
                  const LossWeights& weights);

}  // namespace tfill
