#include <doctest.h>

#include <cmath>

#include "tfill/decoder.hpp"
#include "tfill/gradcheck.hpp"
#include "tfill/ops.hpp"
#include "tfill/rng.hpp"

using namespace tfill;

namespace {

DecoderParams small_decoder(Rng& rng, ParamStore& store, int stages, int dim, bool attn) {
  DecoderConfig cfg;
  cfg.stages = stages;
  cfg.in_dim = dim;
  cfg.min_width = 4;
  cfg.self_attention = attn;
  return init_decoder(cfg, rng, store, "dec.");
}

MaskedImage checker_masked(Rng& rng, int size) {
  Tensor img = rng.uniform_tensor({1, 3, size, size}, 0.0, 1.0);
  std::vector<double> mask(static_cast<std::size_t>(size) * size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) mask[static_cast<std::size_t>(r) * size + c] = (r + c) % 2;
  }
  return make_masked(img, Tensor::from_data({1, 1, size, size}, std::move(mask)));
}

}  // namespace

TEST_CASE("decode output geometry and range") {
  Rng rng(3);
  ParamStore store;
  DecoderParams params = small_decoder(rng, store, 3, 8, false);
  Tensor tokens = rng.normal_tensor({2, 4, 8}, 0.0, 2.0);
  Tensor out = decode(tokens, 2, 2, params);
  CHECK(out.shape() == Shape{2, 3, 16, 16});  // 2^3 x grid
  for (double v : out.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS_AS(decode(tokens, 3, 2, params), ShapeError);
}

TEST_CASE("gradient reaches every token from the decoded image") {
  Rng rng(7);
  ParamStore store;
  DecoderParams params = small_decoder(rng, store, 2, 8, false);
  Tensor tokens = rng.normal_tensor({1, 4, 8}, 0.0, 1.0);
  tokens.set_requires_grad(true);
  TapeScope scope;
  backward(reduce_sum(decode(tokens, 2, 2, params)));
  const auto& g = tokens.grad();
  for (int j = 0; j < 4; ++j) {
    double norm = 0.0;
    for (int c = 0; c < 8; ++c) norm += std::fabs(g[static_cast<std::size_t>(j * 8 + c)]);
    CHECK(norm > 1e-12);
  }
}

TEST_CASE("decoder self-attention variant stays differentiable") {
  Rng rng(11);
  ParamStore store;
  DecoderParams params = small_decoder(rng, store, 2, 8, true);
  CHECK(store.has("dec.attn.gamma"));
  Tensor tokens = rng.normal_tensor({1, 4, 8}, 0.0, 1.0);
  Tensor coeff = rng.uniform_tensor({1, 3, 8, 8}, 0.5, 1.5);
  std::vector<Tensor> leafs;
  for (const auto& [name, t] : store.items()) leafs.push_back(t);
  double err = finite_diff_check_many(
      [&] { return reduce_sum(mul(decode(tokens, 2, 2, params), coeff)); }, leafs, 1e-3);
  CHECK(err < 1e-4);
}

TEST_CASE("compose_output keeps visible pixels bitwise") {
  Rng rng(13);
  MaskedImage input = checker_masked(rng, 8);
  Tensor coarse = rng.uniform_tensor({1, 3, 8, 8}, 0.0, 1.0);
  Tensor out = compose_output(coarse, input);
  std::int64_t plane = 64;
  for (int c = 0; c < 3; ++c) {
    for (std::int64_t p = 0; p < plane; ++p) {
      double m = input.mask.data()[static_cast<std::size_t>(p)];
      double v = out.data()[static_cast<std::size_t>(c * plane + p)];
      if (m == 1.0) {
        CHECK(v == input.image.data()[static_cast<std::size_t>(c * plane + p)]);
      } else {
        CHECK(v == coarse.data()[static_cast<std::size_t>(c * plane + p)]);
      }
    }
  }

  SUBCASE("fully visible mask returns the input exactly") {
    Tensor img = rng.uniform_tensor({1, 3, 4, 4}, 0.0, 1.0);
    MaskedImage visible = make_masked(img, Tensor::ones({1, 1, 4, 4}));
    Tensor composed = compose_output(rng.uniform_tensor({1, 3, 4, 4}, 0.0, 1.0), visible);
    CHECK(composed.data() == visible.image.data());
  }

  SUBCASE("fully masked mask returns the coarse prediction") {
    Tensor img = rng.uniform_tensor({1, 3, 4, 4}, 0.0, 1.0);
    MaskedImage hidden = make_masked(img, Tensor::zeros({1, 1, 4, 4}));
    Tensor pred = rng.uniform_tensor({1, 3, 4, 4}, 0.0, 1.0);
    CHECK(compose_output(pred, hidden).data() == pred.data());
  }

  SUBCASE("idempotent on the visible region") {
    Tensor once = compose_output(coarse, input);
    MaskedImage again;
    again.image = input.image;
    again.mask = input.mask;
    Tensor twice = compose_output(once, again);
    CHECK(twice.data() == once.data());
  }

  SUBCASE("shape mismatch is an error") {
    CHECK_THROWS_AS(compose_output(rng.uniform_tensor({1, 3, 4, 4}, 0.0, 1.0), input), ShapeError);
  }
}
