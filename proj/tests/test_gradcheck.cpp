#include <doctest.h>

#include "tfill/gradcheck.hpp"
#include "tfill/ops.hpp"
#include "tfill/rng.hpp"

using namespace tfill;

namespace {

// Random fixed coefficients break accidental gradient symmetries.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor c = rng.uniform_tensor(y.shape(), 0.5, 1.5);
  return reduce_sum(mul(y, c));
}

}  // namespace

TEST_CASE("linear and quadratic sanity cases") {
  Tensor x = Tensor::from_data({3}, {0.3, -0.7, 1.1});
  double err = finite_diff_check([](const Tensor& t) { return reduce_sum(t); }, x);
  CHECK(err < 1e-9);

  Tensor x2 = Tensor::from_data({2}, {1.0, 2.0});
  Tensor probe = x2.detach_copy();
  probe.set_requires_grad(true);
  {
    TapeScope scope;
    backward(reduce_sum(mul(probe, probe)));
  }
  CHECK(probe.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(probe.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
  err = finite_diff_check([](const Tensor& t) { return reduce_sum(mul(t, t)); }, x2);
  CHECK(err < 1e-8);
}

TEST_CASE("finite_diff_check rejects non-scalar functions") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0});
  CHECK_THROWS_AS(finite_diff_check([](const Tensor& t) { return scale(t, 2.0); }, x),
                  ShapeError);
}

TEST_CASE("every differentiable op passes finite differences over 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    Tensor v = rng.normal_tensor({2, 6}, 0.0, 1.0);

    auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f,
                     const Tensor& at) {
      double err = finite_diff_check(f, at);
      INFO(name, " seed ", seed, " rel err ", err);
      CHECK(err < 1e-5);
    };

    check("add", [&](const Tensor& t) { return weighted_sum(add(t, scale(t, 0.3)), seed); }, v);
    check("sub", [&](const Tensor& t) { return weighted_sum(sub(scale(t, 2.0), t), seed); }, v);
    check("mul", [&](const Tensor& t) { return weighted_sum(mul(t, gelu(t)), seed); }, v);
    check("scale", [&](const Tensor& t) { return weighted_sum(scale(t, -1.7), seed); }, v);
    check("exp", [&](const Tensor& t) { return weighted_sum(exp_t(scale(t, 0.5)), seed); }, v);
    check("gelu", [&](const Tensor& t) { return weighted_sum(gelu(t), seed); }, v);
    check("relu_shifted",
          [&](const Tensor& t) { return weighted_sum(relu(add(t, Tensor::scalar(0.05))), seed); },
          v);
    check("leaky_relu", [&](const Tensor& t) { return weighted_sum(leaky_relu(t, 0.2), seed); }, v);
    check("sigmoid", [&](const Tensor& t) { return weighted_sum(sigmoid(t), seed); }, v);
    check("softplus", [&](const Tensor& t) { return weighted_sum(softplus(t), seed); }, v);
    check("reciprocal",
          [&](const Tensor& t) {
            return weighted_sum(reciprocal(add(mul(t, t), Tensor::scalar(1.0))), seed);
          },
          v);
    Tensor pos = rng.uniform_tensor({2, 6}, 0.5, 2.0);
    check("sqrt", [&](const Tensor& t) { return weighted_sum(sqrt_t(t), seed); }, pos);
    check("abs", [&](const Tensor& t) { return weighted_sum(abs_t(t), seed); }, pos);
    check("softmax", [&](const Tensor& t) { return weighted_sum(softmax(t, 1), seed); }, v);
    check("reduce_sum_axis",
          [&](const Tensor& t) { return weighted_sum(reduce_sum_axis(t, 0), seed); }, v);
    check("reduce_max", [&](const Tensor& t) { return weighted_sum(reduce_max(t, 1), seed); }, v);
    check("transpose",
          [&](const Tensor& t) { return weighted_sum(transpose_last(gelu(t)), seed); }, v);
    check("slice_concat",
          [&](const Tensor& t) {
            Tensor left = slice(t, 1, 0, 3);
            Tensor right = slice(t, 1, 3, 3);
            return weighted_sum(concat({gelu(right), left}, 1), seed);
          },
          v);
    check("index_select",
          [&](const Tensor& t) { return weighted_sum(index_select(t, 1, {5, 0, 0, 2}), seed); },
          v);
    check("expand_last",
          [&](const Tensor& t) { return weighted_sum(expand_last(reduce_sum_axis(t, 1), 4), seed); },
          v);
    check("reshape", [&](const Tensor& t) { return weighted_sum(reshape(gelu(t), {3, 4}), seed); },
          v);

    Tensor mat = rng.normal_tensor({4, 3}, 0.0, 1.0);
    check("matmul_lhs",
          [&](const Tensor& t) { return weighted_sum(matmul(reshape(t, {4, 3}), transpose_last(mat)), seed); },
          rng.normal_tensor({4, 3}, 0.0, 1.0));
    check("matmul_rhs",
          [&](const Tensor& t) { return weighted_sum(matmul(mat, reshape(t, {3, 4})), seed); },
          rng.normal_tensor({3, 4}, 0.0, 1.0));
    check("matmul_batched",
          [&](const Tensor& t) {
            Tensor lhs = reshape(t, {2, 2, 3});
            return weighted_sum(matmul(lhs, transpose_last(lhs)), seed);
          },
          rng.normal_tensor({2, 2, 3}, 0.0, 1.0));

    Tensor gain = rng.uniform_tensor({6}, 0.5, 1.5);
    Tensor bias = rng.normal_tensor({6}, 0.0, 0.5);
    check("layer_norm_x",
          [&](const Tensor& t) { return weighted_sum(layer_norm(t, gain, bias, 1), seed); }, v);
    {
      Tensor x = rng.normal_tensor({3, 6}, 0.0, 1.0);
      double err = finite_diff_check_many(
          [&] { return weighted_sum(layer_norm(x, gain, bias, 1), seed); }, {gain, bias});
      CHECK(err < 1e-5);
    }

    Tensor img = rng.normal_tensor({2, 3, 5, 5}, 0.0, 1.0);
    Tensor kernel = rng.normal_tensor({4, 3, 3, 3}, 0.0, 0.5);
    Tensor cb = rng.normal_tensor({4}, 0.0, 0.5);
    check("conv2d_x",
          [&](const Tensor& t) { return weighted_sum(conv2d(t, kernel, cb, 2, 1), seed); }, img);
    {
      double err = finite_diff_check_many(
          [&] { return weighted_sum(conv2d(img, kernel, cb, 1, 1), seed); }, {kernel, cb});
      CHECK(err < 1e-5);
    }
    check("upsample",
          [&](const Tensor& t) { return weighted_sum(upsample_nearest(t, 2), seed); },
          rng.normal_tensor({1, 2, 3, 3}, 0.0, 1.0));
    check("resize_bilinear",
          [&](const Tensor& t) { return weighted_sum(resize_bilinear(t, 2), seed); },
          rng.normal_tensor({1, 2, 3, 3}, 0.0, 1.0));
    check("resize_area",
          [&](const Tensor& t) { return weighted_sum(resize_area(t, 2), seed); },
          rng.normal_tensor({1, 2, 4, 4}, 0.0, 1.0));
    check("pair_softmax",
          [&](const Tensor& t) {
            Tensor a = slice(t, 1, 0, 3);
            Tensor b = slice(t, 1, 3, 3);
            return weighted_sum(pair_softmax(reshape(a, {9}), reshape(b, {9})), seed);
          },
          rng.normal_tensor({3, 6}, 0.0, 1.0));
    check("add_bias_last",
          [&](const Tensor& t) { return weighted_sum(add_bias_last(t, bias), seed); }, v);
    check("add_batch_bias",
          [&](const Tensor& t) { return weighted_sum(add_batch_bias(t, reshape(bias, {6})), seed); },
          v);
  }
}
