#pragma once

#include <utility>
#include <vector>

#include "tfill/image.hpp"
#include "tfill/params.hpp"
#include "tfill/rng.hpp"
#include "tfill/tensor.hpp"

namespace tfill {

/// Flattened token sequence with one scalar visibility weight per token.
struct TokenGrid {
  Tensor tokens;   // [B,N,C]
  Tensor weights;  // [B,N], clamped to [0.02, 1]; 1.0 over fully visible patches
  int grid_h = 0;
  int grid_w = 0;
};

struct EmbedConfig {
  int blocks = 4;       // stacked blocks; receptive field = 2^blocks, non-overlapping
  int base_width = 16;  // width of block 0; doubles per block
  int out_dim = 128;    // width of the final block (token dimension)
  bool pconv_canonical = false;  // scale by S/sum(m) instead of the literal 1/sum(m)

  int patch() const { return 1 << blocks; }
  int block_width(int b) const { return b == blocks - 1 ? out_dim : base_width << b; }
};

struct EmbedBlockParams {
  Tensor proj_w, proj_b;    // 1x1 projection
  Tensor ln_g, ln_b;        // layer norm over channels
  Tensor pconv_w, pconv_b;  // 2x2 stride-2 partial conv
};

struct EmbedParams {
  EmbedConfig config;
  std::vector<EmbedBlockParams> blocks;
};

EmbedParams init_embed(const EmbedConfig& config, Rng& rng, ParamStore& store,
                       const std::string& prefix);

/// Partial convolution with the float mask update:
///   x' = W(x_p . m_p) / sum(m_p) + b   where sum(m_p) > 0, else 0 (bias
///   suppressed); m' = sum(m_p) / S.
/// Differentiable w.r.t. x, w, b; the mask path carries no gradient. With
/// `canonical` the feature scale becomes S / sum(m_p).
std::pair<Tensor, Tensor> partial_conv2d(const Tensor& x, const Tensor& m, const Tensor& w,
                                         const Tensor& b, int stride, bool canonical = false);

/// The restrictive CNN: `blocks` repetitions of {1x1 conv, layer norm, GELU,
/// 2x2/stride-2 partial conv}. Token weights are the final float mask,
/// clamped once to [0.02, 1].
TokenGrid restrictive_embed(const MaskedImage& input, const EmbedParams& params);

enum class DownsampleRule { Strict, Mean };

/// Block-wise mask reduction: Strict keeps 1 only for fully visible blocks,
/// Mean averages coverage.
Tensor mask_downsample(const Tensor& mask, int factor, DownsampleRule rule);

}  // namespace tfill
