#include "tfill/objective.hpp"

#include <cmath>

#include "tfill/ops.hpp"

namespace tfill {

DiscriminatorParams init_discriminator(const DiscriminatorConfig& config, Rng& rng,
                                       ParamStore& store, const std::string& prefix) {
  DiscriminatorParams p;
  p.config = config;
  int in_ch = 3;
  for (int s = 0; s < config.stages; ++s) {
    int width = config.base_width << std::min(s, 2);
    DiscriminatorStage st;
    std::string base = prefix + "stage" + std::to_string(s) + ".";
    st.conv_w = store.add(base + "conv.w", rng.normal_tensor({width, in_ch, 3, 3}, 0.0, 0.02, true));
    st.conv_b = store.add(base + "conv.b", Tensor::zeros({width}, true));
    p.stages.push_back(st);
    in_ch = width;
  }
  p.head_w = store.add(prefix + "head.w", rng.normal_tensor({in_ch, 1}, 0.0, 0.02, true));
  p.head_b = store.add(prefix + "head.b", Tensor::zeros({1}, true));
  return p;
}

Tensor discriminator_logits(const Tensor& images, const DiscriminatorParams& params) {
  if (images.rank() != 4) throw ShapeError("discriminator: expected [B,3,H,W]");
  Tensor x = images;
  for (const auto& st : params.stages) {
    x = leaky_relu(conv2d(x, st.conv_w, st.conv_b, 2, 1), 0.2);
  }
  // Global average pool keeps the head size-agnostic.
  int B = x.dim(0), C = x.dim(1);
  std::int64_t spatial = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  Tensor pooled = scale(reduce_sum_axis(reshape(x, {B, C, static_cast<int>(spatial)}), 2),
                        1.0 / static_cast<double>(spatial));  // [B,C]
  return add_bias_last(matmul(pooled, params.head_w), params.head_b);
}

PerceptualExtractor PerceptualExtractor::create(std::uint64_t seed) {
  PerceptualExtractor ext;
  ext.seed = seed;
  Rng rng(Rng::derive(seed, 0x9e7c));
  int widths[3] = {8, 16, 32};
  int in_ch = 3;
  for (int level = 0; level < 3; ++level) {
    ext.conv_w.push_back(rng.normal_tensor({widths[level], in_ch, 3, 3}, 0.0,
                                           std::sqrt(2.0 / (9.0 * in_ch)), false));
    ext.conv_b.push_back(Tensor::zeros({widths[level]}, false));
    in_ch = widths[level];
  }
  return ext;
}

std::vector<Tensor> PerceptualExtractor::features(const Tensor& x) const {
  std::vector<Tensor> feats;
  Tensor cur = x;
  for (std::size_t level = 0; level < conv_w.size(); ++level) {
    cur = gelu(conv2d(cur, conv_w[level], conv_b[level], 2, 1));
    feats.push_back(cur);
  }
  return feats;
}

Tensor pixel_loss(const Tensor& gen, const Tensor& gt) {
  if (gen.shape() != gt.shape()) {
    throw ShapeError("pixel_loss: shape mismatch " + shape_str(gen.shape()) + " vs " +
                     shape_str(gt.shape()));
  }
  return mean_all(abs_t(sub(gen, gt)));
}

Tensor perceptual_loss(const Tensor& gen, const Tensor& gt, const PerceptualExtractor& ext) {
  if (gen.shape() != gt.shape()) {
    throw ShapeError("perceptual_loss: shape mismatch " + shape_str(gen.shape()) + " vs " +
                     shape_str(gt.shape()));
  }
  auto gen_feats = ext.features(gen);
  auto gt_feats = ext.features(gt);
  Tensor loss = Tensor::zeros({1});
  for (std::size_t i = 0; i < gen_feats.size(); ++i) {
    loss = add(loss, mean_all(abs_t(sub(gen_feats[i], gt_feats[i]))));
  }
  return loss;
}

Tensor gan_generator_loss(const Tensor& fake_logits) {
  return mean_all(softplus(scale(fake_logits, -1.0)));
}

Tensor gan_discriminator_loss(const Tensor& real_logits, const Tensor& fake_logits) {
  return add(mean_all(softplus(scale(real_logits, -1.0))), mean_all(softplus(fake_logits)));
}

GanLossPair gan_losses(const DiscriminatorParams& d, const Tensor& real, const Tensor& fake) {
  if (real.shape() != fake.shape()) {
    throw ShapeError("gan_losses: real/fake shape mismatch");
  }
  Tensor real_logits = discriminator_logits(real, d);
  Tensor fake_logits = discriminator_logits(fake, d);
  GanLossPair out;
  out.g_loss = gan_generator_loss(fake_logits);
  out.d_loss = gan_discriminator_loss(real_logits, fake_logits);
  return out;
}

Tensor total_loss(const Tensor& pixel, const Tensor& perceptual, const Tensor& gan,
                  const LossWeights& weights) {
  return add(add(scale(pixel, weights.pixel), scale(perceptual, weights.perceptual)),
             scale(gan, weights.gan));
}

}  // namespace tfill
