#include "tfill/refine.hpp"

#include <cmath>

#include "tfill/ops.hpp"

namespace tfill {

RefineParams init_refine(const RefineConfig& config, Rng& rng, ParamStore& store,
                         const std::string& prefix) {
  RefineParams p;
  p.config = config;
  auto stage = [&](const std::string& name, int in_ch, int out_ch) {
    RefineStageParams sp;
    sp.conv_w = store.add(prefix + name + ".conv.w",
                          rng.normal_tensor({out_ch, in_ch, 3, 3}, 0.0, 0.02, true));
    sp.conv_b = store.add(prefix + name + ".conv.b", Tensor::zeros({out_ch}, true));
    sp.ln_g = store.add(prefix + name + ".ln.g", Tensor::ones({out_ch}, true));
    sp.ln_b = store.add(prefix + name + ".ln.b", Tensor::zeros({out_ch}, true));
    return sp;
  };
  // Encoder: stride-1 stem on image+mask, then one stride-2 stage per level.
  p.enc.push_back(stage("enc0", 4, config.trunk_width(0)));
  for (int s = 1; s <= config.downsample_stages; ++s) {
    p.enc.push_back(stage("enc" + std::to_string(s), config.trunk_width(s - 1),
                          config.trunk_width(s)));
  }
  int bottleneck = config.trunk_width(config.downsample_stages);
  p.mid.push_back(stage("mid0", bottleneck, bottleneck));
  p.mid.push_back(stage("mid1", bottleneck, bottleneck));

  int ca = std::max(1, bottleneck / 8);
  p.aal.phi_w = store.add(prefix + "aal.phi.w", rng.normal_tensor({bottleneck, ca}, 0.0, 0.02, true));
  p.aal.phi_b = store.add(prefix + "aal.phi.b", Tensor::zeros({ca}, true));
  p.aal.theta_w = store.add(prefix + "aal.theta.w", rng.normal_tensor({bottleneck, ca}, 0.0, 0.02, true));
  p.aal.theta_b = store.add(prefix + "aal.theta.b", Tensor::zeros({ca}, true));
  p.aal.gamma_w = store.add(prefix + "aal.gamma.w", Tensor::ones({1}, true));
  p.aal.gamma_b = store.add(prefix + "aal.gamma.b", Tensor::zeros({1}, true));
  p.aal.alpha_w = store.add(prefix + "aal.alpha.w", Tensor::ones({1}, true));
  p.aal.alpha_b = store.add(prefix + "aal.alpha.b", Tensor::zeros({1}, true));

  for (int s = config.downsample_stages; s >= 1; --s) {
    p.dec.push_back(stage("dec" + std::to_string(s), config.trunk_width(s),
                          config.trunk_width(s - 1)));
  }
  int w0 = config.trunk_width(0);
  p.head_w = store.add(prefix + "head.w", rng.normal_tensor({3, w0, 3, 3}, 0.0, 0.02, true));
  p.head_b = store.add(prefix + "head.b", Tensor::zeros({3}, true));
  return p;
}

Tensor recompose(const MaskedImage& original, const Tensor& coarse) {
  if (coarse.rank() != 4) throw ShapeError("recompose: coarse must be [B,3,h,w]");
  int hi_h = original.height(), hi_w = original.width();
  int lo_h = coarse.dim(2), lo_w = coarse.dim(3);
  if (hi_h % lo_h != 0 || hi_w % lo_w != 0 || hi_h / lo_h != hi_w / lo_w) {
    throw ShapeError("recompose: high resolution " + std::to_string(hi_h) + "x" +
                     std::to_string(hi_w) + " is not an integer multiple of coarse " +
                     std::to_string(lo_h) + "x" + std::to_string(lo_w));
  }
  int factor = hi_h / lo_h;
  Tensor up = factor == 1 ? coarse : resize_bilinear(coarse, factor);
  Tensor m3 = expand_mask_channels(original.mask, 3);
  return add(mul(original.image, m3), mul(up, invert_mask(m3)));
}

namespace {

// Single-item AAL over flattened positions. xd/xe are [P,C]; A is [P,P].
struct ItemResult {
  Tensor w_v, w_m;  // [P]
  Tensor z_v, z_m;  // [P,C]
  Tensor blended;   // [P,C]
};

ItemResult aal_item(const Tensor& xe, const Tensor& xd, const std::vector<int>& visible,
                    const std::vector<int>& masked, const AALParams& p, bool scale_logits) {
  int P = xd.dim(0);
  int C = xd.dim(1);
  Tensor q = add_bias_last(matmul(xd, p.phi_w), p.phi_b);
  Tensor k = add_bias_last(matmul(xd, p.theta_w), p.theta_b);
  Tensor logits = matmul(q, transpose_last(k));  // [P,P]
  if (scale_logits) logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(q.dim(1))));

  ItemResult r;
  bool has_v = !visible.empty();
  bool has_m = !masked.empty();
  if (has_v) {
    Tensor a_v = index_select(logits, 1, visible);
    r.z_v = matmul(softmax(a_v, 1), index_select(xe, 0, visible));
    if (has_m) {
      Tensor a_m = index_select(logits, 1, masked);
      r.z_m = matmul(softmax(a_m, 1), index_select(xd, 0, masked));
      Tensor s_v = reduce_max(a_v, 1);  // [P]
      Tensor s_m = reduce_max(a_m, 1);
      Tensor gv = add(mul(s_v, p.gamma_w), p.gamma_b);
      Tensor gm = add(mul(s_m, p.alpha_w), p.alpha_b);
      Tensor pair = pair_softmax(gv, gm);  // [P,2]
      r.w_v = reshape(slice(pair, 1, 0, 1), {P});
      r.w_m = reshape(slice(pair, 1, 1, 1), {P});
      r.blended = add(mul(expand_last(r.w_v, C), r.z_v), mul(expand_last(r.w_m, C), r.z_m));
    } else {
      r.w_v = Tensor::ones({P});
      r.w_m = Tensor::zeros({P});
      r.z_m = Tensor::zeros({P, C});
      r.blended = r.z_v;
    }
  } else {
    // No visible keys: everything comes from the masked branch.
    Tensor a_m = index_select(logits, 1, masked);
    r.z_m = matmul(softmax(a_m, 1), index_select(xd, 0, masked));
    r.w_v = Tensor::zeros({P});
    r.w_m = Tensor::ones({P});
    r.z_v = Tensor::zeros({P, C});
    r.blended = r.z_m;
  }
  return r;
}

}  // namespace

Tensor attention_aware_layer(const RefineFeatures& f, const AALParams& params, bool scale_logits,
                             AALRecord* record) {
  if (f.x_e.shape() != f.x_d.shape()) {
    throw ShapeError("attention_aware_layer: x_e " + shape_str(f.x_e.shape()) +
                     " and x_d " + shape_str(f.x_d.shape()) + " must match");
  }
  if (f.feat_mask.rank() != 4 || f.feat_mask.dim(1) != 1 || f.feat_mask.dim(0) != f.x_d.dim(0) ||
      f.feat_mask.dim(2) != f.x_d.dim(2) || f.feat_mask.dim(3) != f.x_d.dim(3)) {
    throw ShapeError("attention_aware_layer: feature mask misaligned");
  }
  int B = f.x_d.dim(0), C = f.x_d.dim(1), h = f.x_d.dim(2), w = f.x_d.dim(3);
  int P = h * w;
  Tensor xe_tok = grid_to_tokens(f.x_e);  // [B,P,C]
  Tensor xd_tok = grid_to_tokens(f.x_d);

  std::vector<Tensor> blended, wv, wm, zv, zm;
  const auto& mv = f.feat_mask.data();
  for (int b = 0; b < B; ++b) {
    std::vector<int> visible, masked;
    for (int i = 0; i < P; ++i) {
      double v = mv[static_cast<std::size_t>(b) * P + static_cast<std::size_t>(i)];
      if (v == 1.0) {
        visible.push_back(i);
      } else if (v == 0.0) {
        masked.push_back(i);
      } else {
        throw ValueError("attention_aware_layer: feature mask must be binary");
      }
    }
    Tensor xe_b = reshape(slice(xe_tok, 0, b, 1), {P, C});
    Tensor xd_b = reshape(slice(xd_tok, 0, b, 1), {P, C});
    ItemResult r = aal_item(xe_b, xd_b, visible, masked, params, scale_logits);
    blended.push_back(reshape(r.blended, {1, P, C}));
    wv.push_back(reshape(r.w_v, {1, P}));
    wm.push_back(reshape(r.w_m, {1, P}));
    zv.push_back(reshape(r.z_v, {1, P, C}));
    zm.push_back(reshape(r.z_m, {1, P, C}));
  }
  Tensor z_tok = B == 1 ? blended[0] : concat(blended, 0);
  Tensor z = tokens_to_grid(z_tok, h, w);
  if (record) {
    record->w_v = B == 1 ? wv[0] : concat(wv, 0);
    record->w_m = B == 1 ? wm[0] : concat(wm, 0);
    record->z_v = B == 1 ? zv[0] : concat(zv, 0);
    record->z_m = B == 1 ? zm[0] : concat(zm, 0);
    record->blended = z;
  }
  return add(f.x_d, z);
}

namespace {

Tensor trunk_stage(const Tensor& x, const RefineStageParams& p, int stride) {
  Tensor y = conv2d(x, p.conv_w, p.conv_b, stride, 1);
  y = layer_norm(y, p.ln_g, p.ln_b, 1);
  return gelu(y);
}

}  // namespace

Tensor refine_forward(const Tensor& merged, const Tensor& mask, const RefineParams& params,
                      AALRecord* record) {
  const auto& cfg = params.config;
  if (merged.rank() != 4 || merged.dim(1) != 3) throw ShapeError("refine_forward: expected [B,3,H,W]");
  int H = merged.dim(2), W = merged.dim(3);
  int div = cfg.divisor();
  if (H % div != 0 || W % div != 0) {
    throw ConfigError("refine_forward: spatial size " + std::to_string(H) + "x" +
                      std::to_string(W) + " must be divisible by " + std::to_string(div));
  }
  Tensor x = concat({merged, mask}, 1);  // mask channel is constant input
  x = trunk_stage(x, params.enc[0], 1);
  for (int s = 1; s < static_cast<int>(params.enc.size()); ++s) {
    x = trunk_stage(x, params.enc[static_cast<std::size_t>(s)], 2);
  }
  Tensor x_e = x;
  for (const auto& m : params.mid) x = trunk_stage(x, m, 1);
  Tensor x_d = x;

  RefineFeatures feats;
  feats.x_e = x_e;
  feats.x_d = x_d;
  feats.feat_mask = mask_downsample(mask, div, DownsampleRule::Strict);
  x = attention_aware_layer(feats, params.aal, cfg.aal_scale_logits, record);

  for (const auto& d : params.dec) {
    x = trunk_stage(x, d, 1);
    x = upsample_nearest(x, 2);
  }
  return sigmoid(conv2d(x, params.head_w, params.head_b, 1, 1));
}

}  // namespace tfill
