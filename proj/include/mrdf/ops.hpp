#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mrdf/tensor.hpp"

// Differentiable tensor operations. All ops record a backward closure when
// any input requires a gradient and grad mode is on.
namespace mrdf {

// Elementwise with suffix broadcasting: `b.shape()` must equal `a.shape()` or
// a trailing suffix of it (bias-style broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

// [.., m, k] x [.., k, n]. Batch dims must match, or `b` may be 2-D and is
// then shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);
// a x b^T over the last two dims, same batching rule as matmul.
Tensor matmul_bt(const Tensor& a, const Tensor& b);
// Swaps the last two dims.
Tensor transpose(const Tensor& x);

Tensor softmax(const Tensor& x, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp_min(const Tensor& x, double floor);

struct Conv2dOptions {
  std::pair<std::size_t, std::size_t> stride{1, 1};
  std::pair<std::size_t, std::size_t> padding{0, 0};
};

// Cross-correlation. x: [B, C, H, W], w: [O, C, kh, kw], bias: [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opts = {});
std::pair<std::size_t, std::size_t> conv2d_output_extent(std::size_t h, std::size_t w, std::size_t kh,
                                                         std::size_t kw, Conv2dOptions opts);

// out.flat[i] = x.flat[index[i]], or 0 where index[i] < 0. Covers reshape,
// permutation, slicing, padding and row lookup.
Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::int64_t> index);
Tensor reshape(const Tensor& x, Shape shape);
// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
// Columns [begin, end) of the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over axis 0: [n, ...] -> [...].
Tensor mean_rows(const Tensor& x);

}  // namespace mrdf
