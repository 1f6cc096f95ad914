#include <doctest.h>

#include <cmath>

#include "tfill/encoder.hpp"
#include "tfill/gradcheck.hpp"
#include "tfill/ops.hpp"
#include "tfill/rng.hpp"

using namespace tfill;

namespace {

EncoderConfig small_config(int tokens, bool weighted) {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.dim = 8;
  cfg.mlp_hidden = 16;
  cfg.tokens = tokens;
  cfg.weighted_attention = weighted;
  return cfg;
}

TokenGrid make_grid(Rng& rng, int batch, int tokens, int dim, std::vector<double> weights) {
  TokenGrid grid;
  grid.tokens = rng.normal_tensor({batch, tokens, dim}, 0.0, 1.0);
  grid.grid_h = 1;
  grid.grid_w = tokens;
  std::vector<double> w;
  for (int b = 0; b < batch; ++b) w.insert(w.end(), weights.begin(), weights.end());
  grid.weights = Tensor::from_data({batch, tokens}, std::move(w));
  return grid;
}

}  // namespace

TEST_CASE("all-ones weights reproduce unweighted attention bitwise") {
  Rng rng(3);
  ParamStore store;
  EncoderConfig weighted_cfg = small_config(4, true);
  EncoderParams params = init_encoder(weighted_cfg, rng, store, "enc.");
  EncoderConfig plain_cfg = weighted_cfg;
  plain_cfg.weighted_attention = false;

  Tensor z = rng.normal_tensor({2, 4, 8}, 0.0, 1.0);
  Tensor w = Tensor::ones({2, 4});
  Tensor out_weighted = weighted_self_attention(z, w, params.layers[0], weighted_cfg);
  Tensor out_plain = weighted_self_attention(z, w, params.layers[0], plain_cfg);
  CHECK(out_weighted.data() == out_plain.data());
}

TEST_CASE("weighted attention equals its equation-level reconstruction") {
  Rng rng(11);
  ParamStore store;
  EncoderConfig cfg = small_config(2, true);
  EncoderParams params = init_encoder(cfg, rng, store, "enc.");
  const auto& layer = params.layers[0];
  int ch = cfg.head_dim();

  Tensor z = rng.normal_tensor({1, 2, 8}, 0.0, 1.0);
  Tensor w = Tensor::from_data({1, 2}, {1.0, 0.25});
  Tensor out = weighted_self_attention(z, w, layer, cfg);

  std::vector<Tensor> heads;
  for (const auto& w_qkv : layer.w_qkv) {
    Tensor qkv = matmul(z, w_qkv);
    Tensor q = slice(qkv, 2, 0, ch);
    Tensor k = slice(qkv, 2, ch, ch);
    Tensor v = slice(qkv, 2, 2 * ch, ch);
    Tensor attn = softmax(scale(matmul(q, transpose_last(k)), 1.0 / std::sqrt(double(ch))), 2);

    // Eq.-level check: the low-weight key column of A_m is exactly 0.25x the
    // corresponding column of A; the full-weight column is untouched.
    Tensor weighted = mul(attn, Tensor::from_data({1, 2, 2}, {1.0, 0.25, 1.0, 0.25}));
    for (int i = 0; i < 2; ++i) {
      CHECK(weighted.at({0, i, 1}) == 0.25 * attn.at({0, i, 1}));
      CHECK(weighted.at({0, i, 0}) == attn.at({0, i, 0}));
    }
    heads.push_back(matmul(weighted, v));
  }
  Tensor reconstructed = add_bias_last(matmul(concat(heads, 2), layer.proj_w), layer.proj_b);
  CHECK(out.data() == reconstructed.data());
}

TEST_CASE("singleton sequence: attention returns the projected value vector") {
  Rng rng(7);
  ParamStore store;
  EncoderConfig cfg = small_config(1, true);
  EncoderParams params = init_encoder(cfg, rng, store, "enc.");
  const auto& layer = params.layers[0];
  int ch = cfg.head_dim();

  Tensor z = rng.normal_tensor({1, 1, 8}, 0.0, 1.0);
  Tensor w = Tensor::ones({1, 1});
  Tensor out = weighted_self_attention(z, w, layer, cfg);

  // A = [[1]] regardless of logits, so SA(z) = v per head.
  std::vector<Tensor> values;
  for (const auto& w_qkv : layer.w_qkv) {
    values.push_back(slice(matmul(z, w_qkv), 2, 2 * ch, ch));
  }
  Tensor expected = add_bias_last(matmul(concat(values, 2), layer.proj_w), layer.proj_b);
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-15));
  }
}

TEST_CASE("attention rows: softmax rows sum to 1, weighting caps them below 1") {
  Rng rng(19);
  ParamStore store;
  EncoderConfig cfg = small_config(5, true);
  EncoderParams params = init_encoder(cfg, rng, store, "enc.");
  const auto& layer = params.layers[0];
  int ch = cfg.head_dim();

  Tensor z = rng.normal_tensor({1, 5, 8}, 0.0, 1.0);
  std::vector<double> wdata{1.0, 0.5, 0.25, 0.125, 0.8};
  Tensor qkv = matmul(z, layer.w_qkv[0]);
  Tensor q = slice(qkv, 2, 0, ch);
  Tensor k = slice(qkv, 2, ch, ch);
  Tensor attn = softmax(scale(matmul(q, transpose_last(k)), 1.0 / std::sqrt(double(ch))), 2);
  for (int i = 0; i < 5; ++i) {
    double row = 0.0, weighted_row = 0.0, expected = 0.0;
    for (int j = 0; j < 5; ++j) {
      row += attn.at({0, i, j});
      weighted_row += attn.at({0, i, j}) * wdata[static_cast<std::size_t>(j)];
      expected += attn.at({0, i, j}) * wdata[static_cast<std::size_t>(j)];
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(weighted_row < 1.0);
    CHECK(weighted_row == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("weight contract: zeros and >1 rejected") {
  Rng rng(23);
  ParamStore store;
  EncoderConfig cfg = small_config(2, true);
  EncoderParams params = init_encoder(cfg, rng, store, "enc.");
  Tensor z = rng.normal_tensor({1, 2, 8}, 0.0, 1.0);
  CHECK_THROWS_AS(
      weighted_self_attention(z, Tensor::from_data({1, 2}, {0.0, 1.0}), params.layers[0], cfg),
      ValueError);
  CHECK_THROWS_AS(
      weighted_self_attention(z, Tensor::from_data({1, 2}, {0.5, 1.5}), params.layers[0], cfg),
      ValueError);
}

TEST_CASE("amplify_weights: iterated square root chain") {
  Tensor w = Tensor::from_data({1, 2}, {0.0625, 1.0});
  Tensor w1 = amplify_weights(w);
  CHECK(w1.data()[0] == 0.25);
  CHECK(w1.data()[1] == 1.0);  // fixed point
  Tensor w2 = amplify_weights(w1);
  CHECK(w2.data()[0] == 0.5);
  Tensor w3 = amplify_weights(w2);
  CHECK(w3.data()[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));

  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    double v = rng.uniform(1e-6, 1.0);
    double s = amplify_weights(Tensor::from_data({1, 1}, {v})).data()[0];
    CHECK(v <= s);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("encoder_forward basics") {
  Rng rng(29);

  SUBCASE("zero layers: output is the input") {
    ParamStore store;
    EncoderConfig cfg = small_config(4, true);
    cfg.layers = 0;
    EncoderParams params = init_encoder(cfg, rng, store, "enc.");
    TokenGrid grid = make_grid(rng, 1, 4, 8, {1.0, 0.5, 0.25, 1.0});
    Tensor out = encoder_forward(grid, params);
    CHECK(out.data() == grid.tokens.data());
  }

  SUBCASE("token-count mismatch raises a configuration error") {
    ParamStore store;
    EncoderConfig cfg = small_config(4, true);
    EncoderParams params = init_encoder(cfg, rng, store, "enc.");
    TokenGrid grid = make_grid(rng, 1, 6, 8, std::vector<double>(6, 1.0));
    CHECK_THROWS_AS(encoder_forward(grid, params), ConfigError);
  }

  SUBCASE("fully visible input: weighted and unweighted paths agree bitwise") {
    ParamStore store;
    EncoderConfig cfg = small_config(4, true);
    cfg.layers = 2;
    EncoderParams params = init_encoder(cfg, rng, store, "enc.");
    TokenGrid grid = make_grid(rng, 2, 4, 8, std::vector<double>(4, 1.0));
    Tensor weighted = encoder_forward(grid, params);
    EncoderParams plain = params;
    plain.config.weighted_attention = false;
    Tensor unweighted = encoder_forward(grid, plain);
    CHECK(weighted.data() == unweighted.data());
  }

  SUBCASE("recorded weights follow the exact sqrt chain, nondecreasing, <= 1") {
    ParamStore store;
    EncoderConfig cfg = small_config(3, true);
    cfg.layers = 4;
    EncoderParams params = init_encoder(cfg, rng, store, "enc.");
    TokenGrid grid = make_grid(rng, 1, 3, 8, {0.0625, 0.5, 1.0});
    EncoderTrace trace;
    encoder_forward(grid, params, &trace);
    REQUIRE(trace.layer_weights.size() == 5);  // w^(1)..w^(5)
    for (std::size_t l = 0; l + 1 < trace.layer_weights.size(); ++l) {
      for (std::size_t i = 0; i < trace.layer_weights[l].size(); ++i) {
        double cur = trace.layer_weights[l][i];
        double next = trace.layer_weights[l + 1][i];
        CHECK(next == std::sqrt(cur));  // exact
        CHECK(next >= cur);
        CHECK(next <= 1.0);
      }
    }
  }
}

TEST_CASE("permutation covariance with zeroed position embeddings") {
  Rng rng(37);
  ParamStore store;
  EncoderConfig cfg = small_config(4, true);
  cfg.layers = 2;
  EncoderParams params = init_encoder(cfg, rng, store, "enc.");
  for (auto& layer : params.layers) {
    std::fill(layer.pos_emb.mutable_data().begin(), layer.pos_emb.mutable_data().end(), 0.0);
  }
  TokenGrid grid = make_grid(rng, 1, 4, 8, {1.0, 0.5, 0.25, 0.75});
  Tensor out = encoder_forward(grid, params);

  std::vector<int> perm{2, 0, 3, 1};
  TokenGrid permuted;
  permuted.grid_h = grid.grid_h;
  permuted.grid_w = grid.grid_w;
  permuted.tokens = index_select(grid.tokens, 1, perm);
  permuted.weights = index_select(grid.weights, 1, perm);
  Tensor out_perm = encoder_forward(permuted, params);
  Tensor expected = index_select(out, 1, perm);
  for (std::size_t i = 0; i < expected.data().size(); ++i) {
    CHECK(out_perm.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-10));
  }
}

TEST_CASE("row renormalization restores unit row sums") {
  Rng rng(41);
  ParamStore store;
  EncoderConfig cfg = small_config(3, true);
  cfg.renormalize_rows = true;
  cfg.heads = 1;
  EncoderParams params = init_encoder(cfg, rng, store, "enc.");
  const auto& layer = params.layers[0];
  int ch = cfg.head_dim();

  Tensor z = rng.normal_tensor({1, 3, 8}, 0.0, 1.0);
  Tensor w = Tensor::from_data({1, 3}, {1.0, 0.25, 0.5});
  // Reconstruct the renormalized attention and check row sums.
  Tensor qkv = matmul(z, layer.w_qkv[0]);
  Tensor q = slice(qkv, 2, 0, ch);
  Tensor k = slice(qkv, 2, ch, ch);
  Tensor attn = softmax(scale(matmul(q, transpose_last(k)), 1.0 / std::sqrt(double(ch))), 2);
  Tensor weighted = mul(attn, Tensor::from_data({1, 3, 3}, {1, 0.25, 0.5, 1, 0.25, 0.5, 1, 0.25, 0.5}));
  Tensor renorm = mul(weighted, expand_last(reciprocal(reduce_sum_axis(weighted, 2)), 3));
  for (int i = 0; i < 3; ++i) {
    double row = renorm.at({0, i, 0}) + renorm.at({0, i, 1}) + renorm.at({0, i, 2});
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
  // And the module path must reproduce it.
  Tensor out = weighted_self_attention(z, w, layer, cfg);
  Tensor v = slice(qkv, 2, 2 * ch, ch);
  Tensor expected = add_bias_last(matmul(matmul(renorm, v), layer.proj_w), layer.proj_b);
  CHECK(out.data() == expected.data());
}

TEST_CASE("query-side weighting variant scales rows instead of columns") {
  Rng rng(43);
  ParamStore store;
  EncoderConfig cfg = small_config(2, true);
  cfg.weight_queries = true;
  cfg.heads = 1;
  EncoderParams params = init_encoder(cfg, rng, store, "enc.");
  const auto& layer = params.layers[0];
  int ch = cfg.head_dim();

  Tensor z = rng.normal_tensor({1, 2, 8}, 0.0, 1.0);
  Tensor w = Tensor::from_data({1, 2}, {1.0, 0.25});
  Tensor out = weighted_self_attention(z, w, layer, cfg);

  Tensor qkv = matmul(z, layer.w_qkv[0]);
  Tensor q = slice(qkv, 2, 0, ch);
  Tensor k = slice(qkv, 2, ch, ch);
  Tensor v = slice(qkv, 2, 2 * ch, ch);
  Tensor attn = softmax(scale(matmul(q, transpose_last(k)), 1.0 / std::sqrt(double(ch))), 2);
  Tensor row_scaled = mul(attn, Tensor::from_data({1, 2, 2}, {1.0, 1.0, 0.25, 0.25}));
  Tensor expected = add_bias_last(matmul(matmul(row_scaled, v), layer.proj_w), layer.proj_b);
  CHECK(out.data() == expected.data());
}

TEST_CASE("one encoder layer reaches every token from every token") {
  Rng rng(47);
  ParamStore store;
  EncoderConfig cfg = small_config(4, true);
  EncoderParams params = init_encoder(cfg, rng, store, "enc.");
  TokenGrid grid = make_grid(rng, 1, 4, 8, {1.0, 0.5, 0.25, 0.75});
  grid.tokens.set_requires_grad(true);

  for (int target = 0; target < 4; ++target) {
    grid.tokens.zero_grad();
    TapeScope scope;
    Tensor out = encoder_forward(grid, params);
    Tensor token_i = slice(out, 1, target, 1);
    backward(reduce_sum(token_i));
    const auto& g = grid.tokens.grad();
    for (int j = 0; j < 4; ++j) {
      double norm = 0.0;
      for (int c = 0; c < 8; ++c) norm += std::fabs(g[static_cast<std::size_t>(j * 8 + c)]);
      INFO("target ", target, " source ", j);
      CHECK(norm > 1e-12);
    }
  }
}

TEST_CASE("encoder layer gradients pass finite differences") {
  Rng rng(53);
  ParamStore store;
  EncoderConfig cfg = small_config(3, true);
  EncoderParams params = init_encoder(cfg, rng, store, "enc.");
  TokenGrid grid = make_grid(rng, 1, 3, 8, {1.0, 0.25, 0.5});
  Tensor coeff = rng.uniform_tensor({1, 3, 8}, 0.5, 1.5);

  std::vector<Tensor> leafs;
  for (const auto& [name, t] : store.items()) leafs.push_back(t);
  // Composite check: eps 1e-3 sits at the bottom of the FD error U-curve
  // (cancellation dominates below, truncation above).
  double err = finite_diff_check_many(
      [&] { return reduce_sum(mul(encoder_forward(grid, params), coeff)); }, leafs, 1e-3);
  CHECK(err < 1e-4);
}
