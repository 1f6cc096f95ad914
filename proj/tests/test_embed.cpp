#include <doctest.h>

#include <cmath>

#include "tfill/embed.hpp"
#include "tfill/gradcheck.hpp"
#include "tfill/ops.hpp"
#include "tfill/rng.hpp"

using namespace tfill;

namespace {

// Direct per-window evaluation of the partial-conv equations, independent of
// the implementation path.
void pconv_reference(const Tensor& x, const Tensor& m, const Tensor& w, const Tensor& b,
                     int stride, bool canonical, std::vector<double>& x_out,
                     std::vector<double>& m_out) {
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int OH = (H - kh) / stride + 1, OW = (W - kw) / stride + 1;
  double S = double(kh) * kw;
  x_out.assign(static_cast<std::size_t>(B) * O * OH * OW, 0.0);
  m_out.assign(static_cast<std::size_t>(B) * OH * OW, 0.0);
  for (int bb = 0; bb < B; ++bb) {
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        double msum = 0.0;
        for (int i = 0; i < kh; ++i) {
          for (int j = 0; j < kw; ++j) {
            msum += m.at({bb, 0, oh * stride + i, ow * stride + j});
          }
        }
        m_out[(static_cast<std::size_t>(bb) * OH + oh) * OW + ow] = msum / S;
        for (int o = 0; o < O; ++o) {
          double v = 0.0;
          if (msum > 0.0) {
            double acc = 0.0;
            for (int c = 0; c < C; ++c) {
              for (int i = 0; i < kh; ++i) {
                for (int j = 0; j < kw; ++j) {
                  acc += w.at({o, c, i, j}) * x.at({bb, c, oh * stride + i, ow * stride + j}) *
                         m.at({bb, 0, oh * stride + i, ow * stride + j});
                }
              }
            }
            v = acc * (canonical ? S / msum : 1.0 / msum) + b.data()[static_cast<std::size_t>(o)];
          }
          x_out[((static_cast<std::size_t>(bb) * O + o) * OH + oh) * OW + ow] = v;
        }
      }
    }
  }
}

// Reference float-mask pyramid for stacked 2x2/stride-2 partial convs.
std::vector<double> mask_pyramid(std::vector<double> m, int h, int w, int levels) {
  for (int l = 0; l < levels; ++l) {
    int oh = h / 2, ow = w / 2;
    std::vector<double> next(static_cast<std::size_t>(oh) * ow);
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        next[static_cast<std::size_t>(i) * ow + j] =
            (m[static_cast<std::size_t>(2 * i) * w + 2 * j] +
             m[static_cast<std::size_t>(2 * i) * w + 2 * j + 1] +
             m[static_cast<std::size_t>(2 * i + 1) * w + 2 * j] +
             m[static_cast<std::size_t>(2 * i + 1) * w + 2 * j + 1]) /
            4.0;
      }
    }
    m = std::move(next);
    h = oh;
    w = ow;
  }
  return m;
}

MaskedImage random_masked(Rng& rng, int batch, int size, double visible_prob) {
  Tensor img = rng.uniform_tensor({batch, 3, size, size}, 0.0, 1.0);
  std::vector<double> mask(static_cast<std::size_t>(batch) * size * size);
  for (auto& v : mask) v = rng.uniform() < visible_prob ? 1.0 : 0.0;
  return make_masked(img, Tensor::from_data({batch, 1, size, size}, std::move(mask)));
}

}  // namespace

TEST_CASE("partial conv follows the stated window equations") {
  // Hand case: W = ones 2x2, b = 0, x_p = [[1,2],[3,4]], m_p = [[1,0],[1,0]].
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor m = Tensor::from_data({1, 1, 2, 2}, {1, 0, 1, 0});
  Tensor w = Tensor::ones({1, 1, 2, 2});
  Tensor b = Tensor::zeros({1});
  auto [feat, mask] = partial_conv2d(x, m, w, b, 2);
  CHECK(feat.item() == 2.0);   // (1 + 3) / 2
  CHECK(mask.item() == 0.5);   // half-visible window

  // Fully masked window: features and mask both zero, bias suppressed.
  Tensor bias = Tensor::full({1}, 5.0);
  auto [feat0, mask0] = partial_conv2d(x, Tensor::zeros({1, 1, 2, 2}), w, bias, 2);
  CHECK(feat0.item() == 0.0);
  CHECK(mask0.item() == 0.0);
}

TEST_CASE("partial conv matches the per-window oracle on random instances") {
  Rng rng(42);
  for (int trial = 0; trial < 60; ++trial) {
    int B = static_cast<int>(rng.randint(1, 2));
    int C = static_cast<int>(rng.randint(1, 3));
    int O = static_cast<int>(rng.randint(1, 3));
    int k = static_cast<int>(rng.randint(2, 3));
    int stride = static_cast<int>(rng.randint(1, 2));
    int size = static_cast<int>(rng.randint(k, 8));
    bool canonical = rng.uniform() < 0.25;
    Tensor x = rng.normal_tensor({B, C, size, size}, 0.0, 1.0);
    std::vector<double> mdata(static_cast<std::size_t>(B) * size * size);
    for (auto& v : mdata) {
      double u = rng.uniform();
      v = u < 0.3 ? 0.0 : (u < 0.6 ? 1.0 : rng.uniform());  // mix of hard and float masks
    }
    Tensor m = Tensor::from_data({B, 1, size, size}, std::move(mdata));
    Tensor w = rng.normal_tensor({O, C, k, k}, 0.0, 1.0);
    Tensor b = rng.normal_tensor({O}, 0.0, 1.0);

    auto [feat, mask] = partial_conv2d(x, m, w, b, stride, canonical);
    std::vector<double> ref_x, ref_m;
    pconv_reference(x, m, w, b, stride, canonical, ref_x, ref_m);
    REQUIRE(feat.data().size() == ref_x.size());
    for (std::size_t i = 0; i < ref_x.size(); ++i) {
      CHECK(feat.data()[i] == doctest::Approx(ref_x[i]).epsilon(1e-12));
    }
    for (std::size_t i = 0; i < ref_m.size(); ++i) {
      CHECK(mask.data()[i] == doctest::Approx(ref_m[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("partial conv on all-visible windows is conv2d scaled by 1/S") {
  Rng rng(5);
  Tensor x = rng.normal_tensor({1, 2, 6, 6}, 0.0, 1.0);
  Tensor m = Tensor::ones({1, 1, 6, 6});
  Tensor w = rng.normal_tensor({3, 2, 2, 2}, 0.0, 1.0);
  Tensor b = rng.normal_tensor({3}, 0.0, 1.0);
  auto [feat, mask] = partial_conv2d(x, m, w, b, 2);
  Tensor scaled = conv2d(x, scale(w, 0.25), b, 2, 0);
  for (std::size_t i = 0; i < feat.data().size(); ++i) {
    CHECK(feat.data()[i] == doctest::Approx(scaled.data()[i]).epsilon(1e-12));
  }
  for (double v : mask.data()) CHECK(v == 1.0);
}

TEST_CASE("partial conv gradients pass finite differences") {
  Rng rng(6);
  Tensor x = rng.normal_tensor({1, 2, 4, 4}, 0.0, 1.0);
  std::vector<double> mdata(16);
  for (auto& v : mdata) v = rng.uniform() < 0.3 ? 0.0 : (rng.uniform() < 0.5 ? 1.0 : 0.5);
  Tensor m = Tensor::from_data({1, 1, 4, 4}, std::move(mdata));
  Tensor w = rng.normal_tensor({2, 2, 2, 2}, 0.0, 1.0);
  Tensor b = rng.normal_tensor({2}, 0.0, 1.0);
  Tensor coeff = rng.uniform_tensor({1, 2, 2, 2}, 0.5, 1.5);

  auto loss = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
    auto [f, nm] = partial_conv2d(xx, m, ww, bb, 2);
    return reduce_sum(mul(f, coeff));
  };
  double err_x = finite_diff_check([&](const Tensor& t) { return loss(t, w, b); }, x);
  CHECK(err_x < 1e-6);
  double err_w = finite_diff_check([&](const Tensor& t) { return loss(x, t, b); }, w);
  CHECK(err_w < 1e-6);
  double err_b = finite_diff_check([&](const Tensor& t) { return loss(x, w, t); }, b);
  CHECK(err_b < 1e-6);
}

TEST_CASE("restrictive embed weight semantics") {
  Rng rng(9);
  ParamStore store;
  EmbedConfig cfg;
  cfg.blocks = 4;
  cfg.base_width = 4;
  cfg.out_dim = 8;
  EmbedParams params = init_embed(cfg, rng, store, "embed.");

  SUBCASE("fully visible image gives weight exactly 1 everywhere") {
    MaskedImage in = random_masked(rng, 1, 32, 1.1);  // always visible
    TokenGrid grid = restrictive_embed(in, params);
    CHECK(grid.tokens.shape() == Shape{1, 4, 8});
    for (double v : grid.weights.data()) CHECK(v == 1.0);
  }

  SUBCASE("a 16x16 patch with 192 visible pixels gets weight 192/256") {
    // Single token: 16x16 input with B=4. Mask out one aligned 8x8 corner
    // (64 pixels) so every mask level averages cleanly: 192/256 = 0.75.
    std::vector<double> mask(256, 1.0);
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) mask[static_cast<std::size_t>(r) * 16 + c] = 0.0;
    }
    Tensor img = rng.uniform_tensor({1, 3, 16, 16}, 0.0, 1.0);
    MaskedImage in = make_masked(img, Tensor::from_data({1, 1, 16, 16}, std::move(mask)));
    TokenGrid grid = restrictive_embed(in, params);
    CHECK(grid.weights.numel() == 1);
    CHECK(grid.weights.data()[0] == doctest::Approx(0.75).epsilon(1e-15));
  }

  SUBCASE("B=1 weight equals the exact visible fraction") {
    ParamStore store1;
    EmbedConfig c1;
    c1.blocks = 1;
    c1.base_width = 4;
    c1.out_dim = 4;
    EmbedParams p1 = init_embed(c1, rng, store1, "e.");
    MaskedImage in = random_masked(rng, 1, 6, 0.6);
    TokenGrid grid = restrictive_embed(in, p1);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double frac = (in.mask.at({0, 0, 2 * i, 2 * j}) + in.mask.at({0, 0, 2 * i, 2 * j + 1}) +
                       in.mask.at({0, 0, 2 * i + 1, 2 * j}) +
                       in.mask.at({0, 0, 2 * i + 1, 2 * j + 1})) /
                      4.0;
        double expect = std::min(std::max(frac, 0.02), 1.0);
        CHECK(grid.weights.at({0, i * 3 + j}) == expect);
      }
    }
  }

  SUBCASE("B>1 weights match the brute-force mask pyramid") {
    MaskedImage in = random_masked(rng, 2, 32, 0.5);
    TokenGrid grid = restrictive_embed(in, params);
    for (int b = 0; b < 2; ++b) {
      std::vector<double> plane(in.mask.data().begin() + b * 32 * 32,
                                in.mask.data().begin() + (b + 1) * 32 * 32);
      auto ref = mask_pyramid(plane, 32, 32, 4);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        double expect = std::min(std::max(ref[i], 0.02), 1.0);
        CHECK(grid.weights.at({b, static_cast<int>(i)}) == doctest::Approx(expect).epsilon(1e-15));
      }
    }
  }

  SUBCASE("fully masked tokens clamp to the 0.02 floor") {
    std::vector<double> mask(32 * 32, 1.0);
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 16; ++c) mask[static_cast<std::size_t>(r) * 32 + c] = 0.0;
    }
    Tensor img = rng.uniform_tensor({1, 3, 32, 32}, 0.0, 1.0);
    MaskedImage in = make_masked(img, Tensor::from_data({1, 1, 32, 32}, std::move(mask)));
    TokenGrid grid = restrictive_embed(in, params);
    CHECK(grid.weights.at({0, 0}) == 0.02);
    for (double v : grid.weights.data()) {
      CHECK(v >= 0.02);
      CHECK(v <= 1.0);
    }
  }

  SUBCASE("indivisible input names the required divisor") {
    MaskedImage in = random_masked(rng, 1, 24, 0.5);
    bool threw = false;
    try {
      restrictive_embed(in, params);
    } catch (const ConfigError& e) {
      threw = true;
      CHECK(std::string(e.what()).find("divisible by 2^4 = 16") != std::string::npos);
    }
    CHECK(threw);
  }
}

TEST_CASE("perturbing a masked pixel changes no token value") {
  Rng rng(13);
  ParamStore store;
  EmbedConfig cfg;
  cfg.blocks = 2;
  cfg.base_width = 4;
  cfg.out_dim = 8;
  EmbedParams params = init_embed(cfg, rng, store, "e.");
  MaskedImage in = random_masked(rng, 1, 8, 0.5);
  TokenGrid base = restrictive_embed(in, params);

  // Find a masked pixel and perturb it (bypassing ingestion zeroing).
  int idx = -1;
  for (std::size_t i = 0; i < in.mask.data().size(); ++i) {
    if (in.mask.data()[i] == 0.0) {
      idx = static_cast<int>(i);
      break;
    }
  }
  REQUIRE(idx >= 0);
  MaskedImage poked = in;
  poked.image = in.image.detach_copy();
  poked.image.mutable_data()[static_cast<std::size_t>(idx)] = 0.987;  // red channel
  TokenGrid after = restrictive_embed(poked, params);
  CHECK(after.tokens.data() == base.tokens.data());
  CHECK(after.weights.data() == base.weights.data());
}

TEST_CASE("embed at paper scale: 256x256 with B=4 gives 256 tokens") {
  Rng rng(21);
  ParamStore store;
  EmbedConfig cfg;
  cfg.blocks = 4;
  cfg.base_width = 4;
  cfg.out_dim = 8;
  EmbedParams params = init_embed(cfg, rng, store, "e.");
  MaskedImage in = random_masked(rng, 1, 256, 0.7);
  TokenGrid grid = restrictive_embed(in, params);
  CHECK(grid.grid_h == 16);
  CHECK(grid.grid_w == 16);
  CHECK(grid.tokens.dim(1) == 256);
}

TEST_CASE("mask_downsample strict and mean rules") {
  Tensor ones = Tensor::ones({1, 1, 4, 4});
  CHECK(mask_downsample(ones, 2, DownsampleRule::Strict).data() == std::vector<double>(4, 1.0));
  CHECK(mask_downsample(ones, 2, DownsampleRule::Mean).data() == std::vector<double>(4, 1.0));

  std::vector<double> one_hole(16, 1.0);
  one_hole[5] = 0.0;  // inside block (1,0) of factor-2 tiling? index 5 = row1,col1 -> block (0,0)
  Tensor holed = Tensor::from_data({1, 1, 4, 4}, std::move(one_hole));
  Tensor strict = mask_downsample(holed, 2, DownsampleRule::Strict);
  Tensor mean = mask_downsample(holed, 2, DownsampleRule::Mean);
  CHECK(strict.at({0, 0, 0, 0}) == 0.0);
  CHECK(strict.at({0, 0, 1, 1}) == 1.0);
  CHECK(mean.at({0, 0, 0, 0}) == 0.75);  // 1 - 1/factor^2

  // strict(m) <= ceil(mean(m)) elementwise on random masks.
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> m(64);
    for (auto& v : m) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor mm = Tensor::from_data({1, 1, 8, 8}, std::move(m));
    Tensor s = mask_downsample(mm, 4, DownsampleRule::Strict);
    Tensor a = mask_downsample(mm, 4, DownsampleRule::Mean);
    for (std::size_t i = 0; i < s.data().size(); ++i) {
      CHECK(s.data()[i] <= std::ceil(a.data()[i]));
    }
  }

  CHECK_THROWS_AS(mask_downsample(ones, 3, DownsampleRule::Strict), ShapeError);
}
