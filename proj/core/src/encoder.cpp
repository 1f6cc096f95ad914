#include "tfill/encoder.hpp"

#include <cmath>

#include "tfill/ops.hpp"

namespace tfill {

EncoderParams init_encoder(const EncoderConfig& config, Rng& rng, ParamStore& store,
                           const std::string& prefix) {
  if (config.dim % config.heads != 0) {
    throw ConfigError("encoder: dim " + std::to_string(config.dim) + " not divisible by heads " +
                      std::to_string(config.heads));
  }
  EncoderParams p;
  p.config = config;
  int ch = config.head_dim();
  for (int l = 0; l < config.layers; ++l) {
    EncoderLayerParams lp;
    std::string base = prefix + "layer" + std::to_string(l) + ".";
    for (int h = 0; h < config.heads; ++h) {
      lp.w_qkv.push_back(store.add(base + "head" + std::to_string(h) + ".w_qkv",
                                   rng.normal_tensor({config.dim, 3 * ch}, 0.0, 0.02, true)));
    }
    lp.proj_w = store.add(base + "proj.w", rng.normal_tensor({config.dim, config.dim}, 0.0, 0.02, true));
    lp.proj_b = store.add(base + "proj.b", Tensor::zeros({config.dim}, true));
    lp.ln1_g = store.add(base + "ln1.g", Tensor::ones({config.dim}, true));
    lp.ln1_b = store.add(base + "ln1.b", Tensor::zeros({config.dim}, true));
    lp.ln2_g = store.add(base + "ln2.g", Tensor::ones({config.dim}, true));
    lp.ln2_b = store.add(base + "ln2.b", Tensor::zeros({config.dim}, true));
    lp.mlp_w1 = store.add(base + "mlp.w1", rng.normal_tensor({config.dim, config.mlp_hidden}, 0.0, 0.02, true));
    lp.mlp_b1 = store.add(base + "mlp.b1", Tensor::zeros({config.mlp_hidden}, true));
    lp.mlp_w2 = store.add(base + "mlp.w2", rng.normal_tensor({config.mlp_hidden, config.dim}, 0.0, 0.02, true));
    lp.mlp_b2 = store.add(base + "mlp.b2", Tensor::zeros({config.dim}, true));
    lp.pos_emb = store.add(base + "pos_emb",
                           rng.normal_tensor({config.tokens, config.dim}, 0.0, 0.02, true));
    p.layers.push_back(lp);
  }
  return p;
}

namespace {

void validate_weights(const Tensor& w) {
  for (double v : w.data()) {
    if (!(v > 0.0) || v > 1.0) {
      throw ValueError("attention weights must lie in (0,1], got " + std::to_string(v));
    }
  }
}

// Constant [B,N,N] matrix carrying w along columns (key side) or rows
// (query side). Weights are data-derived statistics, so this carries no
// gradient.
Tensor weight_matrix(const Tensor& w, bool rows) {
  int B = w.dim(0), N = w.dim(1);
  std::vector<double> out(static_cast<std::size_t>(B) * N * N);
  const auto& wv = w.data();
  for (int b = 0; b < B; ++b) {
    const double* wp = &wv[static_cast<std::size_t>(b) * N];
    double* op = &out[static_cast<std::size_t>(b) * N * N];
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) op[i * N + j] = rows ? wp[i] : wp[j];
    }
  }
  return Tensor::from_data({B, N, N}, std::move(out));
}

}  // namespace

Tensor weighted_self_attention(const Tensor& z, const Tensor& w, const EncoderLayerParams& params,
                               const EncoderConfig& config) {
  if (z.rank() != 3) throw ShapeError("weighted_self_attention: expected [B,N,C]");
  int ch = config.head_dim();
  double inv_sqrt_ch = 1.0 / std::sqrt(static_cast<double>(ch));
  Tensor weight_mat;
  if (config.weighted_attention) {
    validate_weights(w);
    weight_mat = weight_matrix(w, config.weight_queries);
  }
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(params.w_qkv.size());
  for (const auto& w_qkv : params.w_qkv) {
    Tensor qkv = matmul(z, w_qkv);  // [B,N,3*ch]
    Tensor q = slice(qkv, 2, 0, ch);
    Tensor k = slice(qkv, 2, ch, ch);
    Tensor v = slice(qkv, 2, 2 * ch, ch);
    Tensor logits = scale(matmul(q, transpose_last(k)), inv_sqrt_ch);
    Tensor attn = softmax(logits, 2);
    if (config.weighted_attention) {
      attn = mul(attn, weight_mat);
      if (config.renormalize_rows) {
        Tensor row_sums = reduce_sum_axis(attn, 2);           // [B,N]
        Tensor inv = expand_last(reciprocal(row_sums), attn.dim(2));
        attn = mul(attn, inv);
      }
    }
    head_outputs.push_back(matmul(attn, v));  // [B,N,ch]
  }
  Tensor merged = head_outputs.size() == 1 ? head_outputs[0] : concat(head_outputs, 2);
  return add_bias_last(matmul(merged, params.proj_w), params.proj_b);
}

Tensor amplify_weights(const Tensor& w) {
  std::vector<double> out = w.data();
  for (auto& v : out) {
    if (!(v > 0.0) || v > 1.0) throw ValueError("amplify_weights: weights must lie in (0,1]");
    v = std::sqrt(v);
  }
  return Tensor::from_data(w.shape(), std::move(out));
}

Tensor encoder_forward(const TokenGrid& tokens, const EncoderParams& params,
                       EncoderTrace* trace) {
  const auto& cfg = params.config;
  Tensor z = tokens.tokens;
  if (z.dim(1) != cfg.tokens) {
    throw ConfigError("encoder: sequence length " + std::to_string(z.dim(1)) +
                      " does not match the fixed position-embedding length " +
                      std::to_string(cfg.tokens));
  }
  Tensor w = tokens.weights;
  if (trace) trace->layer_weights.push_back(w.data());
  for (const auto& layer : params.layers) {
    z = add_batch_bias(z, layer.pos_emb);
    Tensor normed = layer_norm(z, layer.ln1_g, layer.ln1_b, 2);
    z = add(z, weighted_self_attention(normed, w, layer, cfg));
    Tensor normed2 = layer_norm(z, layer.ln2_g, layer.ln2_b, 2);
    Tensor hidden = gelu(add_bias_last(matmul(normed2, layer.mlp_w1), layer.mlp_b1));
    z = add(z, add_bias_last(matmul(hidden, layer.mlp_w2), layer.mlp_b2));
    w = amplify_weights(w);
    if (trace) trace->layer_weights.push_back(w.data());
  }
  return z;
}

}  // namespace tfill
