#include "tfill/embed.hpp"

#include <cmath>

#include "tfill/ops.hpp"

namespace tfill {

EmbedParams init_embed(const EmbedConfig& config, Rng& rng, ParamStore& store,
                       const std::string& prefix) {
  if (config.blocks < 1) throw ConfigError("embed: blocks must be >= 1");
  EmbedParams p;
  p.config = config;
  int in_ch = 3;
  for (int b = 0; b < config.blocks; ++b) {
    int width = config.block_width(b);
    EmbedBlockParams blk;
    std::string base = prefix + "block" + std::to_string(b) + ".";
    blk.proj_w = store.add(base + "proj.w",
                           rng.normal_tensor({width, in_ch, 1, 1}, 0.0, 0.02, true));
    blk.proj_b = store.add(base + "proj.b", Tensor::zeros({width}, true));
    blk.ln_g = store.add(base + "ln.g", Tensor::ones({width}, true));
    blk.ln_b = store.add(base + "ln.b", Tensor::zeros({width}, true));
    blk.pconv_w = store.add(base + "pconv.w",
                            rng.normal_tensor({width, width, 2, 2}, 0.0, 0.02, true));
    blk.pconv_b = store.add(base + "pconv.b", Tensor::zeros({width}, true));
    p.blocks.push_back(blk);
    in_ch = width;
  }
  return p;
}

std::pair<Tensor, Tensor> partial_conv2d(const Tensor& x, const Tensor& m, const Tensor& w,
                                         const Tensor& b, int stride, bool canonical) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("partial_conv2d: x must be [B,C,H,W], w [O,C,kh,kw]");
  }
  if (m.rank() != 4 || m.dim(1) != 1 || m.dim(0) != x.dim(0) || m.dim(2) != x.dim(2) ||
      m.dim(3) != x.dim(3)) {
    throw ShapeError("partial_conv2d: mask must be [B,1,H,W] aligned with x, got " +
                     shape_str(m.shape()));
  }
  if (stride < 1) throw ShapeError("partial_conv2d: stride must be >= 1");
  for (double v : m.data()) {
    if (v < 0.0 || v > 1.0) throw ValueError("partial_conv2d: mask values must lie in [0,1]");
  }
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) throw ShapeError("partial_conv2d: channel mismatch");
  if (b.numel() != O) throw ShapeError("partial_conv2d: bias length mismatch");
  if (kh > H || kw > W) throw ShapeError("partial_conv2d: kernel larger than input");
  const std::int64_t OH = (H - kh) / stride + 1;
  const std::int64_t OW = (W - kw) / stride + 1;
  const double S = static_cast<double>(kh * kw);

  // Per-window mask sums; the scale applied to each window's features.
  std::vector<double> mask_out(static_cast<std::size_t>(B * OH * OW));
  std::vector<double> win_scale(static_cast<std::size_t>(B * OH * OW));
  const auto& mv = m.data();
  for (std::int64_t bb = 0; bb < B; ++bb) {
    const double* mp = &mv[static_cast<std::size_t>(bb * H * W)];
    for (std::int64_t oh = 0; oh < OH; ++oh) {
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        double msum = 0.0;
        for (std::int64_t i = 0; i < kh; ++i) {
          const double* row = mp + (oh * stride + i) * W + ow * stride;
          for (std::int64_t j = 0; j < kw; ++j) msum += row[j];
        }
        auto idx = static_cast<std::size_t>((bb * OH + oh) * OW + ow);
        mask_out[idx] = msum / S;
        win_scale[idx] = msum > 0.0 ? (canonical ? S / msum : 1.0 / msum) : 0.0;
      }
    }
  }

  std::vector<double> out(static_cast<std::size_t>(B * O * OH * OW));
  const auto& xv = x.data();
  const auto& wv = w.data();
  const auto& bv = b.data();
  for (std::int64_t bb = 0; bb < B; ++bb) {
    const double* mp = &mv[static_cast<std::size_t>(bb * H * W)];
    for (std::int64_t o = 0; o < O; ++o) {
      double* outp = &out[static_cast<std::size_t>((bb * O + o) * OH * OW)];
      for (std::int64_t oh = 0; oh < OH; ++oh) {
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          auto widx = static_cast<std::size_t>((bb * OH + oh) * OW + ow);
          double scale = win_scale[widx];
          if (scale == 0.0) {
            outp[oh * OW + ow] = 0.0;  // fully masked: bias suppressed
            continue;
          }
          double acc = 0.0;
          for (std::int64_t c = 0; c < C; ++c) {
            const double* xp = &xv[static_cast<std::size_t>((bb * C + c) * H * W)];
            const double* wp = &wv[static_cast<std::size_t>((o * C + c) * kh * kw)];
            for (std::int64_t i = 0; i < kh; ++i) {
              const double* xrow = xp + (oh * stride + i) * W + ow * stride;
              const double* mrow = mp + (oh * stride + i) * W + ow * stride;
              for (std::int64_t j = 0; j < kw; ++j) {
                acc += wp[i * kw + j] * xrow[j] * mrow[j];
              }
            }
          }
          outp[oh * OW + ow] = acc * scale + bv[static_cast<std::size_t>(o)];
        }
      }
    }
  }

  auto out_node = std::make_shared<TensorNode>();
  out_node->shape = {static_cast<int>(B), static_cast<int>(O), static_cast<int>(OH),
                     static_cast<int>(OW)};
  out_node->data = std::move(out);
  out_node->requires_grad = x.requires_grad() || w.requires_grad() || b.requires_grad();
  Tensor features = Tensor::wrap(out_node);
  TFILL_DEBUG_CHECK_FINITE(out_node, "partial_conv2d");

  Tensor new_mask = Tensor::from_data({static_cast<int>(B), 1, static_cast<int>(OH),
                                       static_cast<int>(OW)},
                                      std::move(mask_out));

  if (features.requires_grad() && Tape::active()) {
    auto xn = x.node(), mn = m.node(), wn = w.node(), bn = b.node(), on = out_node;
    auto scales = win_scale;
    int s = stride;
    Tape::active()->record(
        {xn, wn, bn}, on,
        [xn, mn, wn, bn, on, scales, s, B, C, H, W, O, kh, kw, OH, OW] {
          const auto& g = on->grad;
          const auto& xv2 = xn->data;
          const auto& wv2 = wn->data;
          const auto& mv2 = mn->data;
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t bb = 0; bb < B; ++bb) {
              for (std::int64_t o = 0; o < O; ++o) {
                const double* gp = &g[static_cast<std::size_t>((bb * O + o) * OH * OW)];
                double acc = 0.0;
                for (std::int64_t oh = 0; oh < OH; ++oh) {
                  for (std::int64_t ow = 0; ow < OW; ++ow) {
                    if (scales[static_cast<std::size_t>((bb * OH + oh) * OW + ow)] != 0.0) {
                      acc += gp[oh * OW + ow];
                    }
                  }
                }
                bn->grad[static_cast<std::size_t>(o)] += acc;
              }
            }
          }
          if (!xn->requires_grad && !wn->requires_grad) return;
          if (xn->requires_grad) xn->ensure_grad();
          if (wn->requires_grad) wn->ensure_grad();
          for (std::int64_t bb = 0; bb < B; ++bb) {
            const double* mp = &mv2[static_cast<std::size_t>(bb * H * W)];
            for (std::int64_t o = 0; o < O; ++o) {
              const double* gp = &g[static_cast<std::size_t>((bb * O + o) * OH * OW)];
              for (std::int64_t c = 0; c < C; ++c) {
                const double* xp = &xv2[static_cast<std::size_t>((bb * C + c) * H * W)];
                const double* wp = &wv2[static_cast<std::size_t>((o * C + c) * kh * kw)];
                double* dxp = xn->requires_grad
                                  ? &xn->grad[static_cast<std::size_t>((bb * C + c) * H * W)]
                                  : nullptr;
                double* dwp = wn->requires_grad
                                  ? &wn->grad[static_cast<std::size_t>((o * C + c) * kh * kw)]
                                  : nullptr;
                for (std::int64_t oh = 0; oh < OH; ++oh) {
                  for (std::int64_t ow = 0; ow < OW; ++ow) {
                    double scale = scales[static_cast<std::size_t>((bb * OH + oh) * OW + ow)];
                    if (scale == 0.0) continue;
                    double gv = gp[oh * OW + ow] * scale;
                    if (gv == 0.0) continue;
                    for (std::int64_t i = 0; i < kh; ++i) {
                      const double* xrow = xp + (oh * s + i) * W + ow * s;
                      const double* mrow = mp + (oh * s + i) * W + ow * s;
                      double* dxrow = dxp ? dxp + (oh * s + i) * W + ow * s : nullptr;
                      for (std::int64_t j = 0; j < kw; ++j) {
                        double masked = mrow[j];
                        if (masked == 0.0) continue;
                        if (dxrow) dxrow[j] += gv * wp[i * kw + j] * masked;
                        if (dwp) dwp[i * kw + j] += gv * xrow[j] * masked;
                      }
                    }
                  }
                }
              }
            }
          }
        },
        "partial_conv2d");
  }
  return {features, new_mask};
}

TokenGrid restrictive_embed(const MaskedImage& input, const EmbedParams& params) {
  const auto& cfg = params.config;
  int patch = cfg.patch();
  int H = input.height(), W = input.width();
  if (H % patch != 0 || W % patch != 0) {
    throw ConfigError("restrictive_embed: spatial size " + std::to_string(H) + "x" +
                      std::to_string(W) + " must be divisible by 2^" + std::to_string(cfg.blocks) +
                      " = " + std::to_string(patch));
  }
  Tensor x = input.image;
  Tensor m = input.mask;
  for (int b = 0; b < cfg.blocks; ++b) {
    const auto& blk = params.blocks[static_cast<std::size_t>(b)];
    x = conv2d(x, blk.proj_w, blk.proj_b, 1, 0);
    x = layer_norm(x, blk.ln_g, blk.ln_b, 1);
    x = gelu(x);
    auto [xf, mf] = partial_conv2d(x, m, blk.pconv_w, blk.pconv_b, 2, cfg.pconv_canonical);
    x = xf;
    m = mf;
  }
  TokenGrid grid;
  grid.grid_h = H / patch;
  grid.grid_w = W / patch;
  grid.tokens = grid_to_tokens(x);
  // Weight clamp applied once at the embedder output; fully masked tokens
  // get the 0.02 floor, never 0.
  std::vector<double> wdata = m.data();
  for (auto& v : wdata) v = std::min(std::max(v, 0.02), 1.0);
  grid.weights = Tensor::from_data({input.batch(), grid.grid_h * grid.grid_w}, std::move(wdata));
  return grid;
}

Tensor mask_downsample(const Tensor& mask, int factor, DownsampleRule rule) {
  if (mask.rank() != 4 || mask.dim(1) != 1) throw ShapeError("mask_downsample: expected [B,1,H,W]");
  if (factor < 1) throw ShapeError("mask_downsample: factor must be >= 1");
  int B = mask.dim(0), H = mask.dim(2), W = mask.dim(3);
  if (H % factor != 0 || W % factor != 0) {
    throw ShapeError("mask_downsample: size " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by " + std::to_string(factor));
  }
  int OH = H / factor, OW = W / factor;
  std::vector<double> out(static_cast<std::size_t>(B) * OH * OW);
  const auto& mv = mask.data();
  double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int b = 0; b < B; ++b) {
    const double* mp = &mv[static_cast<std::size_t>(b) * H * W];
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        double sum = 0.0;
        bool all = true;
        for (int i = 0; i < factor; ++i) {
          const double* row = mp + (oh * factor + i) * W + ow * factor;
          for (int j = 0; j < factor; ++j) {
            sum += row[j];
            all = all && row[j] == 1.0;
          }
        }
        out[(static_cast<std::size_t>(b) * OH + oh) * OW + ow] =
            rule == DownsampleRule::Strict ? (all ? 1.0 : 0.0) : sum * inv;
      }
    }
  }
  return Tensor::from_data({B, 1, OH, OW}, std::move(out));
}

}  // namespace tfill
