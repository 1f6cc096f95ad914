#pragma once

#include <vector>

#include "tfill/embed.hpp"
#include "tfill/params.hpp"
#include "tfill/rng.hpp"
#include "tfill/tensor.hpp"

namespace tfill {

struct DecoderConfig {
  int stages = 4;   // one 2x upsample per stage, matching the embed depth
  int in_dim = 128; // token dimension
  int min_width = 16;
  bool self_attention = false;  // spatial self-attention at token resolution

  int stage_width(int s) const {
    int w = in_dim >> (s + 1);
    return w < min_width ? min_width : w;
  }
};

struct DecoderStageParams {
  Tensor conv_w, conv_b, ln_g, ln_b;
};

struct DecoderAttnParams {
  Tensor f_w, f_b;   // query projection (C -> C/8)
  Tensor g_w, g_b;   // key projection
  Tensor h_w, h_b;   // value projection (C -> C)
  Tensor gamma;      // residual gate, init 0
};

struct DecoderParams {
  DecoderConfig config;
  DecoderAttnParams attn;  // used when config.self_attention
  std::vector<DecoderStageParams> stages;
  Tensor head_w, head_b;
};

DecoderParams init_decoder(const DecoderConfig& config, Rng& rng, ParamStore& store,
                           const std::string& prefix);

/// One-shot decoding: tokens to a [B,3,2^stages*gh,2^stages*gw] image in
/// (0,1) via nearest-upsample + conv stages and a sigmoid head.
Tensor decode(const Tensor& encoded, int grid_h, int grid_w, const DecoderParams& params);

/// Keeps visible pixels: mask.image + (1-mask).coarse, bitwise on the
/// visible region.
Tensor compose_output(const Tensor& coarse, const MaskedImage& input);

}  // namespace tfill
