#include <doctest.h>

#include <cmath>

#include "tfill/ops.hpp"
#include "tfill/rng.hpp"

using namespace tfill;

TEST_CASE("matmul identity and hand-evaluated cases") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {2, 3, 4, 5});
  CHECK(matmul(eye, m).data() == m.data());

  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor b = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(a, b).item() == 11.0);  // 1*3 + 2*4

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 1})), ShapeError);
}

TEST_CASE("matmul batched variants agree with per-slice products") {
  Rng rng(7);
  Tensor a = rng.normal_tensor({3, 4, 5}, 0.0, 1.0);
  Tensor b2 = rng.normal_tensor({5, 2}, 0.0, 1.0);
  Tensor b3 = rng.normal_tensor({3, 5, 2}, 0.0, 1.0);
  Tensor shared = matmul(a, b2);
  Tensor stacked = matmul(a, b3);
  for (int batch = 0; batch < 3; ++batch) {
    Tensor ab = reshape(slice(a, 0, batch, 1), {4, 5});
    Tensor sb = reshape(slice(b3, 0, batch, 1), {5, 2});
    Tensor ref_shared = matmul(ab, b2);
    Tensor ref_stacked = matmul(ab, sb);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 2; ++j) {
        CHECK(shared.at({batch, i, j}) == ref_shared.at({i, j}));
        CHECK(stacked.at({batch, i, j}) == ref_stacked.at({i, j}));
      }
    }
  }
}

TEST_CASE("softmax normalization, symmetry and oracle values") {
  CHECK(softmax(Tensor::from_data({1}, {42.0}), 0).item() == 1.0);

  Tensor pair = softmax(Tensor::from_data({2}, {0.0, 0.0}), 0);
  CHECK(pair.data()[0] == 0.5);
  CHECK(pair.data()[1] == 0.5);

  // Independent high-precision evaluation of softmax([1,2,3]).
  Tensor y = softmax(Tensor::from_data({3}, {1.0, 2.0, 3.0}), 0);
  double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  double z = e1 + e2 + e3;
  CHECK(y.data()[0] == doctest::Approx(e1 / z).epsilon(1e-14));
  CHECK(y.data()[1] == doctest::Approx(e2 / z).epsilon(1e-14));
  CHECK(y.data()[2] == doctest::Approx(e3 / z).epsilon(1e-14));

  // Slices sum to 1 within 1e-9 and entries lie in (0,1].
  Rng rng(3);
  Tensor x = rng.normal_tensor({4, 6}, 0.0, 5.0);
  Tensor s = softmax(x, 1);
  for (int r = 0; r < 4; ++r) {
    double total = 0.0;
    for (int c = 0; c < 6; ++c) {
      double v = s.at({r, c});
      CHECK(v > 0.0);
      CHECK(v <= 1.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("layer_norm trivial and statistical oracles") {
  Tensor gain = Tensor::ones({4});
  Tensor bias = Tensor::zeros({4});
  Tensor constant = Tensor::full({4}, 3.0);
  Tensor y = layer_norm(constant, gain, bias, 0);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  // Output mean ~ bias, variance ~ gain^2 for random input.
  Rng rng(11);
  Tensor x = rng.normal_tensor({64}, 1.5, 2.0);
  Tensor g2 = Tensor::full({64}, 0.7);
  Tensor b2 = Tensor::full({64}, -0.3);
  Tensor out = layer_norm(x, g2, b2, 0);
  double mean = 0.0;
  for (double v : out.data()) mean += v;
  mean /= 64.0;
  double var = 0.0;
  for (double v : out.data()) var += (v - mean) * (v - mean);
  var /= 64.0;
  CHECK(mean == doctest::Approx(-0.3).epsilon(1e-3));
  CHECK(var == doctest::Approx(0.49).epsilon(1e-3));

  CHECK_THROWS_AS(layer_norm(x, Tensor::ones({3}), Tensor::zeros({3}), 0), ShapeError);
}

TEST_CASE("conv2d identity kernel and hand-evaluated stride case") {
  Rng rng(5);
  Tensor x = rng.uniform_tensor({1, 1, 3, 3}, 0.0, 1.0);
  Tensor w = Tensor::ones({1, 1, 1, 1});
  Tensor b = Tensor::zeros({1});
  CHECK(conv2d(x, w, b, 1, 0).data() == x.data());

  Tensor x2 = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w2 = Tensor::ones({1, 1, 2, 2});
  CHECK(conv2d(x2, w2, b, 2, 0).item() == 10.0);

  CHECK_THROWS_AS(conv2d(x2, Tensor::ones({1, 1, 5, 5}), b, 1, 0), ShapeError);
}

TEST_CASE("elementwise suite values") {
  CHECK(sqrt_t(Tensor::scalar(0.25)).item() == 0.5);
  CHECK_THROWS_AS(sqrt_t(Tensor::scalar(-1.0)), ValueError);

  std::vector<std::int64_t> argmax;
  Tensor mx = reduce_max(Tensor::from_data({3}, {3.0, 1.0, 3.0}), 0, &argmax);
  CHECK(mx.item() == 3.0);
  CHECK(argmax[0] == 0);  // first index wins the tie

  CHECK(relu(Tensor::scalar(-2.0)).item() == 0.0);
  CHECK(leaky_relu(Tensor::scalar(-2.0), 0.2).item() == doctest::Approx(-0.4));
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(abs_t(Tensor::scalar(-3.0)).item() == 3.0);

  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  CHECK(add(Tensor::scalar(1.0), Tensor::from_data({2}, {1.0, 2.0})).data()[1] == 3.0);
  CHECK(mul(Tensor::from_data({2}, {2.0, 4.0}), Tensor::scalar(0.5)).data()[1] == 2.0);
}

TEST_CASE("reduce_max ties route gradient to the first index only") {
  Tensor x = Tensor::from_data({3}, {3.0, 1.0, 3.0}, true);
  TapeScope scope;
  Tensor y = reduce_max(x, 0);
  backward(y);
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("softplus matches the naive form and survives large inputs") {
  for (double v : {-10.0, -3.0, -0.5, 0.0, 0.5, 3.0, 10.0}) {
    double naive = std::log(1.0 + std::exp(v));
    CHECK(softplus(Tensor::scalar(v)).item() == doctest::Approx(naive).epsilon(1e-12));
  }
  CHECK(softplus(Tensor::scalar(1000.0)).item() == 1000.0);
  CHECK(softplus(Tensor::scalar(-1000.0)).item() == 0.0);
  CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("upsample_nearest replicates and its backward preserves sums") {
  CHECK(upsample_nearest(Tensor::from_data({1, 1, 1, 1}, {1.0}), 2).data() ==
        std::vector<double>{1.0, 1.0, 1.0, 1.0});
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  CHECK(upsample_nearest(x, 1).data() == x.data());
  {
    TapeScope scope;
    backward(reduce_sum(upsample_nearest(x, 3)));
  }
  for (double g : x.grad()) CHECK(g == 9.0);  // factor^2
  CHECK_THROWS_AS(upsample_nearest(x, 0), ShapeError);
}

TEST_CASE("concat/slice/transpose/index_select round structure") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {5, 6});
  Tensor c = concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.data() == std::vector<double>{1, 2, 5, 3, 4, 6});
  CHECK(slice(c, 1, 2, 1).data() == std::vector<double>{5, 6});

  Tensor t = transpose_last(a);
  CHECK(t.data() == std::vector<double>{1, 3, 2, 4});

  Tensor sel = index_select(c, 1, {2, 0});
  CHECK(sel.data() == std::vector<double>{5, 1, 6, 3});

  Tensor e = expand_last(Tensor::from_data({2}, {7, 9}), 3);
  CHECK(e.shape() == Shape{2, 3});
  CHECK(e.data() == std::vector<double>{7, 7, 7, 9, 9, 9});
}

TEST_CASE("pair_softmax sums to one exactly and swaps exactly") {
  Rng rng(17);
  Tensor a = rng.normal_tensor({257}, 0.0, 3.0);
  Tensor b = rng.normal_tensor({257}, 0.0, 3.0);
  Tensor fwd = pair_softmax(a, b);
  Tensor swapped = pair_softmax(b, a);
  for (int i = 0; i < 257; ++i) {
    double wa = fwd.at({i, 0});
    double wb = fwd.at({i, 1});
    CHECK(wa + wb == 1.0);  // exact, not approximate
    CHECK(swapped.at({i, 0}) == wb);
    CHECK(swapped.at({i, 1}) == wa);
  }
}

TEST_CASE("tokens_to_grid is the inverse of grid_to_tokens") {
  Rng rng(23);
  Tensor grid = rng.normal_tensor({2, 3, 2, 4}, 0.0, 1.0);
  Tensor tokens = grid_to_tokens(grid);
  CHECK(tokens.shape() == Shape{2, 8, 3});
  Tensor back = tokens_to_grid(tokens, 2, 4);
  CHECK(back.data() == grid.data());
}

TEST_CASE("resize ops: area downscale averages, bilinear 2x interpolates") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(resize_area(x, 2).item() == 2.5);

  Tensor up = resize_bilinear(x, 2);
  CHECK(up.shape() == Shape{1, 1, 4, 4});
  // centre sample blends its four neighbours with weights 0.75/0.25
  CHECK(up.at({0, 0, 0, 0}) == 1.0);  // clamped corner
  CHECK(up.at({0, 0, 3, 3}) == 4.0);
  CHECK(up.at({0, 0, 1, 1}) ==
        doctest::Approx(0.75 * (0.75 * 1 + 0.25 * 2) + 0.25 * (0.75 * 3 + 0.25 * 4)));
}
