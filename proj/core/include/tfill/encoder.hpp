#pragma once

#include <vector>

#include "tfill/embed.hpp"
#include "tfill/params.hpp"
#include "tfill/rng.hpp"
#include "tfill/tensor.hpp"

namespace tfill {

struct EncoderConfig {
  int layers = 4;
  int heads = 4;
  int dim = 128;  // token dimension C, divisible by heads
  int mlp_hidden = 512;
  int tokens = 16;  // N, bound by the per-layer position embeddings
  bool weighted_attention = true;
  bool renormalize_rows = false;
  // Literal reading of the paper's row extension: scale rows (queries)
  // instead of key columns. Ablation only.
  bool weight_queries = false;

  int head_dim() const { return dim / heads; }
};

struct EncoderLayerParams {
  std::vector<Tensor> w_qkv;  // one fused [C, 3*C_h] matrix per head
  Tensor proj_w, proj_b;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor pos_emb;  // [N, C], learned, independent per layer
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<EncoderLayerParams> layers;
};

EncoderParams init_encoder(const EncoderConfig& config, Rng& rng, ParamStore& store,
                           const std::string& prefix);

/// Per-layer record of the visibility weights (w^(1), ..., w^(L+1)) for
/// inspection; the amplification chain w^(i+1) = sqrt(w^(i)) is exact.
struct EncoderTrace {
  std::vector<std::vector<double>> layer_weights;
};

/// Post-softmax attention scores scaled by per-token visibility weights
/// (A_m[i,j] = A[i,j] * w[j]); heads run in parallel, concatenated, projected.
/// Weights must lie in (0,1].
Tensor weighted_self_attention(const Tensor& z, const Tensor& w, const EncoderLayerParams& params,
                               const EncoderConfig& config);

/// Elementwise square root, applied to the weights after every encoder
/// layer. Pure data transform; never on the tape.
Tensor amplify_weights(const Tensor& w);

/// Pre-norm transformer: per layer z += pos; z += WSA(LN(z), w); z += MLP(LN(z));
/// then w <- sqrt(w).
Tensor encoder_forward(const TokenGrid& tokens, const EncoderParams& params,
                       EncoderTrace* trace = nullptr);

}  // namespace tfill
