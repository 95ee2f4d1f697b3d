#pragma once

// Numeric kernels for every layer, in two implementations with identical
// contracts:
//
//   dnnshield::reference  serial nested loops, innermost index fastest. These
//                         define the expected values and stay untouched by
//                         performance work.
//   dnnshield::kernels    OpenMP-parallel loops with Eigen-backed GEMM. Used by
//                         the layers during training and inference.
//
// Shapes: dense inputs are [batch, features]; image inputs are [batch, c, h, w]
// (a rank-3 [c, h, w] input is treated as a batch of one and returned rank-3).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dnnshield/tensor.hpp"

namespace dnnshield {

struct ConvGeometry {
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t out_c = 0, kh = 0, kw = 0;
  std::size_t stride = 1, padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kh) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kw) / stride + 1; }
  std::size_t patch() const { return in_c * kh * kw; }

  // Validates against the filter [out_c, in_c, kh, kw] and an input image shape.
  static ConvGeometry make(const Shape& image_chw, const Shape& filter, std::size_t stride,
                           std::size_t padding);
};

struct AffineGrads {
  Tensor dx, dw, db;
};

struct ConvGrads {
  Tensor dx, df, db;
};

struct PoolResult {
  Tensor y;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;  // gradient of the mean loss
};

namespace reference {

Tensor matmul_affine(const Tensor& x, const Tensor& w, const Tensor& b);
AffineGrads matmul_affine_backward(const Tensor& x, const Tensor& w, const Tensor& g);

Tensor conv2d(const Tensor& x, const Tensor& f, const Tensor* bias = nullptr, std::size_t stride = 1,
              std::size_t padding = 0);
ConvGrads conv2d_backward(const Tensor& x, const Tensor& f, const Tensor& g, std::size_t stride = 1,
                          std::size_t padding = 0);

Tensor elementwise_mul(const Tensor& x, const Tensor& k);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& g);

PoolResult maxpool2x2(const Tensor& x);
Tensor maxpool2x2_backward(const Tensor& g, const std::vector<std::uint32_t>& argmax, const Shape& input_shape);

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Per-channel circular shift of the row-major flattened h*w plane. Positive
// shifts move values toward higher flat indices.
Tensor shift_channels(const Tensor& x, std::span<const std::int64_t> shifts, bool inverse);

}  // namespace reference

namespace kernels {

// Keeps freed activation buffers in the heap instead of returning them to the
// OS, so the next minibatch does not page-fault them back in. Process-wide;
// executables call it once at startup.
void retain_freed_memory();

Tensor matmul_affine(const Tensor& x, const Tensor& w, const Tensor& b);
// need_dx=false skips the input gradient (first layer of a network).
AffineGrads matmul_affine_backward(const Tensor& x, const Tensor& w, const Tensor& g, bool need_dx = true);

// Lowered convolution. When cols is non-null it receives the im2col matrix
// [patch, batch*out_h*out_w] for reuse by conv2d_backward_cols.
Tensor conv2d(const Tensor& x, const Tensor& f, const Tensor* bias = nullptr, std::size_t stride = 1,
              std::size_t padding = 0, std::vector<double>* cols = nullptr);
ConvGrads conv2d_backward(const Tensor& x, const Tensor& f, const Tensor& g, std::size_t stride = 1,
                          std::size_t padding = 0, bool need_dx = true);
ConvGrads conv2d_backward_cols(const std::vector<double>& cols, const Shape& input_shape, const Tensor& f,
                               const Tensor& g, std::size_t stride, std::size_t padding, bool need_dx);

Tensor elementwise_mul(const Tensor& x, const Tensor& k);
// y[b, ...] = x[b, ...] * k[...] with k shaped like one sample.
Tensor scale_broadcast(const Tensor& x, const Tensor& k);
// Sum over the batch of g * x, shaped like one sample.
Tensor scale_broadcast_key_grad(const Tensor& x, const Tensor& g);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& g);

PoolResult maxpool2x2(const Tensor& x);
Tensor maxpool2x2_backward(const Tensor& g, const std::vector<std::uint32_t>& argmax, const Shape& input_shape);

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor shift_channels(const Tensor& x, std::span<const std::int64_t> shifts, bool inverse);

}  // namespace kernels

}  // namespace dnnshield
