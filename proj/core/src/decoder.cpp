#include "tfill/decoder.hpp"

#include <cmath>

#include "tfill/ops.hpp"

namespace tfill {

DecoderParams init_decoder(const DecoderConfig& config, Rng& rng, ParamStore& store,
                           const std::string& prefix) {
  DecoderParams p;
  p.config = config;
  if (config.self_attention) {
    int ca = std::max(1, config.in_dim / 8);
    p.attn.f_w = store.add(prefix + "attn.f.w", rng.normal_tensor({config.in_dim, ca}, 0.0, 0.02, true));
    p.attn.f_b = store.add(prefix + "attn.f.b", Tensor::zeros({ca}, true));
    p.attn.g_w = store.add(prefix + "attn.g.w", rng.normal_tensor({config.in_dim, ca}, 0.0, 0.02, true));
    p.attn.g_b = store.add(prefix + "attn.g.b", Tensor::zeros({ca}, true));
    p.attn.h_w = store.add(prefix + "attn.h.w",
                           rng.normal_tensor({config.in_dim, config.in_dim}, 0.0, 0.02, true));
    p.attn.h_b = store.add(prefix + "attn.h.b", Tensor::zeros({config.in_dim}, true));
    p.attn.gamma = store.add(prefix + "attn.gamma", Tensor::zeros({1}, true));
  }
  int in_ch = config.in_dim;
  for (int s = 0; s < config.stages; ++s) {
    int width = config.stage_width(s);
    DecoderStageParams sp;
    std::string base = prefix + "stage" + std::to_string(s) + ".";
    sp.conv_w = store.add(base + "conv.w", rng.normal_tensor({width, in_ch, 3, 3}, 0.0, 0.02, true));
    sp.conv_b = store.add(base + "conv.b", Tensor::zeros({width}, true));
    sp.ln_g = store.add(base + "ln.g", Tensor::ones({width}, true));
    sp.ln_b = store.add(base + "ln.b", Tensor::zeros({width}, true));
    p.stages.push_back(sp);
    in_ch = width;
  }
  p.head_w = store.add(prefix + "head.w", rng.normal_tensor({3, in_ch, 3, 3}, 0.0, 0.02, true));
  p.head_b = store.add(prefix + "head.b", Tensor::zeros({3}, true));
  return p;
}

namespace {

Tensor spatial_self_attention(const Tensor& x, const DecoderAttnParams& p) {
  int ca = p.f_w.dim(1);
  Tensor flat = grid_to_tokens(x);  // [B,P,C]
  Tensor q = add_bias_last(matmul(flat, p.f_w), p.f_b);
  Tensor k = add_bias_last(matmul(flat, p.g_w), p.g_b);
  Tensor v = add_bias_last(matmul(flat, p.h_w), p.h_b);
  Tensor attn = softmax(scale(matmul(q, transpose_last(k)), 1.0 / std::sqrt(double(ca))), 2);
  Tensor out = tokens_to_grid(matmul(attn, v), x.dim(2), x.dim(3));
  return add(x, mul(out, p.gamma));
}

}  // namespace

Tensor decode(const Tensor& encoded, int grid_h, int grid_w, const DecoderParams& params) {
  Tensor x = tokens_to_grid(encoded, grid_h, grid_w);  // throws on grid mismatch
  if (params.config.self_attention) x = spatial_self_attention(x, params.attn);
  for (const auto& stage : params.stages) {
    x = upsample_nearest(x, 2);
    x = conv2d(x, stage.conv_w, stage.conv_b, 1, 1);
    x = layer_norm(x, stage.ln_g, stage.ln_b, 1);
    x = gelu(x);
  }
  return sigmoid(conv2d(x, params.head_w, params.head_b, 1, 1));
}

Tensor compose_output(const Tensor& coarse, const MaskedImage& input) {
  if (coarse.shape() != input.image.shape()) {
    throw ShapeError("compose_output: shape mismatch " + shape_str(coarse.shape()) + " vs " +
                     shape_str(input.image.shape()));
  }
  Tensor m3 = expand_mask_channels(input.mask, 3);
  return add(mul(input.image, m3), mul(coarse, invert_mask(m3)));
}

}  // namespace tfill
