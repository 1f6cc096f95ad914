#pragma once

#include <cstdint>
#include <vector>

#include "tfill/tensor.hpp"

namespace tfill {

// Elementwise arithmetic. Broadcasting is limited to equal shapes and
// scalar-vs-tensor; anything else is a ShapeError.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

Tensor sqrt_t(const Tensor& x);
Tensor exp_t(const Tensor& x);
Tensor abs_t(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Branches at |x| > 20: x for large x, exp(x) for very negative x.
Tensor softplus(const Tensor& x);
// 1/x elementwise; zero input is an error.
Tensor reciprocal(const Tensor& x);

// x + b with b of rank 1 matching the last dimension.
Tensor add_bias_last(const Tensor& x, const Tensor& b);
// x + p with p.shape == x.shape()[1:], broadcast over the leading dimension.
Tensor add_batch_bias(const Tensor& x, const Tensor& p);

// Shape manipulation. Slices and reshapes copy; there is no aliasing in the
// graph.
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor transpose_last(const Tensor& x);
Tensor index_select(const Tensor& x, int axis, const std::vector<int>& indices);
// [d0,...,dk] -> [d0,...,dk,n], replicating each element.
Tensor expand_last(const Tensor& x, int n);

Tensor reduce_sum(const Tensor& x);
Tensor reduce_sum_axis(const Tensor& x, int axis);
Tensor mean_all(const Tensor& x);
// Max along `axis` (removed from the shape). Ties break to the first index;
// the backward pass routes the gradient only to the argmax positions.
Tensor reduce_max(const Tensor& x, int axis, std::vector<std::int64_t>* argmax = nullptr);

// Matrix product. Accepts [M,K]x[K,N], stacked [D...,M,K]x[K,N] (shared
// right operand) and [D...,M,K]x[D...,K,N] with equal leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// Exp-normalization along `axis` with max subtraction; slices sum to 1.
Tensor softmax(const Tensor& x, int axis);

// Normalizes along `axis` to zero mean / unit variance (eps = 1e-5), then
// applies the rank-1 gain/bias of length shape[axis].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, int axis);

// Cross-correlation convolution, x:[B,C,H,W], w:[O,C,kh,kw], b:[O].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);

Tensor upsample_nearest(const Tensor& x, int factor);
// Integer-factor bilinear upscale (half-pixel centers, clamped borders).
Tensor resize_bilinear(const Tensor& x, int factor);
// Integer-factor area downscale (block mean).
Tensor resize_area(const Tensor& x, int factor);

// Two-way softmax over paired logits; output shape is a.shape + [2] and the
// two entries sum to 1.0 exactly (smaller weight computed, larger is its
// complement). Swapping (a, b) swaps the outputs bitwise.
Tensor pair_softmax(const Tensor& a, const Tensor& b);

// [B,N,C] tokens -> [B,C,gh,gw] feature map and back.
Tensor tokens_to_grid(const Tensor& tokens, int grid_h, int grid_w);
Tensor grid_to_tokens(const Tensor& grid);

}  // namespace tfill
