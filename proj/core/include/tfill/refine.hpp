#pragma once

#include <vector>

#include "tfill/embed.hpp"
#include "tfill/image.hpp"
#include "tfill/params.hpp"
#include "tfill/rng.hpp"
#include "tfill/tensor.hpp"

namespace tfill {

struct AALParams {
  Tensor phi_w, phi_b;      // 1x1 query projection on x_d
  Tensor theta_w, theta_b;  // 1x1 key projection on x_d
  Tensor gamma_w, gamma_b;  // scalar affine on max visible score, init identity
  Tensor alpha_w, alpha_b;  // scalar affine on max masked score, init identity
};

/// Encoded/decoded features at the AAL resolution plus the strict-rule
/// feature mask (1 = every covered pixel visible).
struct RefineFeatures {
  Tensor x_e;
  Tensor x_d;
  Tensor feat_mask;  // [B,1,h,w], binary
};

/// Introspection record of one AAL application: the Eq. 4 operands, the
/// pre-residual output, and the blended result. w_v + w_m == 1 exactly.
struct AALRecord {
  Tensor w_v, w_m;  // [B,P]
  Tensor z_v, z_m;  // [B,P,C]
  Tensor blended;   // [B,C,h,w], pre-residual
};

struct RefineConfig {
  int base_width = 24;        // widths: base, 2*base, 2*base at 1/1, 1/2, 1/4
  int downsample_stages = 2;  // AAL sits at 1/2^stages resolution
  bool aal_scale_logits = true;

  int divisor() const { return 1 << downsample_stages; }
  int trunk_width(int level) const { return level == 0 ? base_width : 2 * base_width; }
};

struct RefineStageParams {
  Tensor conv_w, conv_b, ln_g, ln_b;
};

struct RefineParams {
  RefineConfig config;
  std::vector<RefineStageParams> enc;  // stages 0..downsample_stages (stride 1 then 2s)
  std::vector<RefineStageParams> mid;  // bottleneck convs producing x_d
  AALParams aal;
  std::vector<RefineStageParams> dec;  // conv + upsample back to full size
  Tensor head_w, head_b;
};

RefineParams init_refine(const RefineConfig& config, Rng& rng, ParamStore& store,
                         const std::string& prefix);

/// Fills masked pixels with the (bilinear-upsampled) coarse prediction while
/// copying visible pixels from the original. High res must be an integer
/// multiple of the coarse res.
Tensor recompose(const MaskedImage& original, const Tensor& coarse);

/// Eqs. of the attention-aware layer: similarity A = phi(x_d)^T theta(x_d),
/// keys split by the feature mask, z_v copied from x_e over visible keys and
/// z_m from x_d over masked keys, blended by a per-position pair softmax of
/// the mapped row maxima. Returns x_d + z; `record` captures the operands.
Tensor attention_aware_layer(const RefineFeatures& f, const AALParams& params,
                             bool scale_logits = true, AALRecord* record = nullptr);

/// Fully convolutional refinement: conv encoder to 1/4 resolution, AAL,
/// decoder back to full resolution with a sigmoid head. Any input whose
/// sides are divisible by the stage divisor is accepted.
Tensor refine_forward(const Tensor& merged, const Tensor& mask, const RefineParams& params,
                      AALRecord* record = nullptr);

}  // namespace tfill
