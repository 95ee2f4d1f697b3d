#include "dnnshield/kernels.hpp"

#include <Eigen/Core>
#include <malloc.h>

#include <cmath>
#include <cstring>

#include "kernels_common.hpp"

namespace dnnshield::kernels {

namespace {

constexpr std::size_t kParallelMin = 1 << 14;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;
using View = Eigen::Map<RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;

// C[m,n] = op(A) * op(B) + beta * C, all row-major.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  const ConstView A(a, trans_a ? ei(k) : ei(m), trans_a ? ei(m) : ei(k), Eigen::OuterStride<>(ei(lda)));
  const ConstView B(b, trans_b ? ei(n) : ei(k), trans_b ? ei(k) : ei(n), Eigen::OuterStride<>(ei(ldb)));
  View C(c, ei(m), ei(n), Eigen::OuterStride<>(ei(ldc)));
  if (beta == 0.0) {
    C.setZero();
  } else if (beta != 1.0) {
    C *= beta;
  }
  if (trans_a && trans_b) {
    C.noalias() += A.transpose() * B.transpose();
  } else if (trans_a) {
    C.noalias() += A.transpose() * B;
  } else if (trans_b) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() += A * B;
  }
}

void im2col(const double* x, const ConvGeometry& g, std::size_t batch, double* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow, n = batch * plane;
  const std::size_t in_plane = g.in_c * g.in_h * g.in_w;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
#pragma omp parallel for schedule(static) if (batch * g.patch() * plane > kParallelMin)
  for (std::size_t b = 0; b < batch; ++b) {
    const double* img = x + b * in_plane;
    for (std::size_t ci = 0; ci < g.in_c; ++ci) {
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::size_t row = (ci * g.kh + ky) * g.kw + kx;
          double* dst = cols + row * n + b * plane;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.in_h) &&
                                  ix < static_cast<std::ptrdiff_t>(g.in_w);
              dst[oy * ow + ox] =
                  inside ? img[(ci * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)]
                         : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, std::size_t batch, double* dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow, n = batch * plane;
  const std::size_t in_plane = g.in_c * g.in_h * g.in_w;
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
#pragma omp parallel for schedule(static) if (batch * g.patch() * plane > kParallelMin)
  for (std::size_t b = 0; b < batch; ++b) {
    double* img = dx + b * in_plane;
    for (std::size_t ci = 0; ci < g.in_c; ++ci) {
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::size_t row = (ci * g.kh + ky) * g.kw + kx;
          const double* src = cols + row * n + b * plane;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              img[(ci * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)] +=
                  src[oy * ow + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void retain_freed_memory() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

Tensor matmul_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto d = detail::check_affine(x, w, b);
  Tensor y({d.batch, d.out});
  for (std::size_t i = 0; i < d.batch; ++i) std::memcpy(y.data() + i * d.out, b.data(), d.out * sizeof(double));
  gemm(false, true, d.batch, d.out, d.in, x.data(), d.in, w.data(), d.in, 1.0, y.data(), d.out);
  return y;
}

AffineGrads matmul_affine_backward(const Tensor& x, const Tensor& w, const Tensor& g, bool need_dx) {
  const auto d = detail::check_affine(x, w, Tensor({w.dim(0)}));
  require_same_shape(g.shape(), {d.batch, d.out}, "matmul_affine_backward upstream");
  AffineGrads r{need_dx ? Tensor(x.shape()) : Tensor(), Tensor(w.shape()), Tensor({d.out})};
  if (need_dx) gemm(false, false, d.batch, d.in, d.out, g.data(), d.out, w.data(), d.in, 0.0, r.dx.data(), d.in);
  gemm(true, false, d.out, d.in, d.batch, g.data(), d.out, x.data(), d.in, 0.0, r.dw.data(), d.in);
  for (std::size_t i = 0; i < d.batch; ++i) {
    const double* row = g.data() + i * d.out;
    for (std::size_t j = 0; j < d.out; ++j) r.db[j] += row[j];
  }
  return r;
}

Tensor conv2d(const Tensor& x, const Tensor& f, const Tensor* bias, std::size_t stride, std::size_t padding,
              std::vector<double>* cols_out) {
  const auto ib = detail::image_batch(x.shape(), "conv2d");
  const auto g = ConvGeometry::make({ib.c, ib.h, ib.w}, f.shape(), stride, padding);
  detail::check_bias(bias, g.out_c);
  const std::size_t plane = g.out_h() * g.out_w(), n = ib.batch * plane, k = g.patch();

  std::vector<double> local;
  std::vector<double>& cols = cols_out ? *cols_out : local;
  cols.resize(k * n);
  im2col(x.data(), g, ib.batch, cols.data());

  std::vector<double> out(g.out_c * n);
  gemm(false, false, g.out_c, n, k, f.data(), k, cols.data(), n, 0.0, out.data(), n);

  Tensor y(detail::image_shape(ib, g.out_c, g.out_h(), g.out_w()));
#pragma omp parallel for schedule(static) if (y.size() > kParallelMin)
  for (std::size_t b = 0; b < ib.batch; ++b) {
    for (std::size_t co = 0; co < g.out_c; ++co) {
      const double add = bias ? (*bias)[co] : 0.0;
      const double* src = out.data() + co * n + b * plane;
      double* dst = y.data() + (b * g.out_c + co) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + add;
    }
  }
  return y;
}

ConvGrads conv2d_backward_cols(const std::vector<double>& cols, const Shape& input_shape, const Tensor& f,
                               const Tensor& gy, std::size_t stride, std::size_t padding, bool need_dx) {
  const auto ib = detail::image_batch(input_shape, "conv2d_backward");
  const auto g = ConvGeometry::make({ib.c, ib.h, ib.w}, f.shape(), stride, padding);
  const std::size_t plane = g.out_h() * g.out_w(), n = ib.batch * plane, k = g.patch();
  require_same_shape(gy.shape(), detail::image_shape(ib, g.out_c, g.out_h(), g.out_w()), "conv2d_backward upstream");
  if (cols.size() != k * n) throw StateError("conv2d_backward: lowered input does not match geometry");

  std::vector<double> gt(g.out_c * n);
#pragma omp parallel for schedule(static) if (gy.size() > kParallelMin)
  for (std::size_t b = 0; b < ib.batch; ++b) {
    for (std::size_t co = 0; co < g.out_c; ++co) {
      std::memcpy(gt.data() + co * n + b * plane, gy.data() + (b * g.out_c + co) * plane, plane * sizeof(double));
    }
  }

  ConvGrads r{need_dx ? Tensor(input_shape) : Tensor(), Tensor(f.shape()), Tensor({g.out_c})};
  gemm(false, true, g.out_c, k, n, gt.data(), n, cols.data(), n, 0.0, r.df.data(), k);
  for (std::size_t co = 0; co < g.out_c; ++co) {
    const double* row = gt.data() + co * n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += row[i];
    r.db[co] = acc;
  }
  if (need_dx) {
    std::vector<double> dcols(k * n);
    gemm(true, false, k, n, g.out_c, f.data(), k, gt.data(), n, 0.0, dcols.data(), n);
    col2im(dcols.data(), g, ib.batch, r.dx.data());
  }
  return r;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& f, const Tensor& g, std::size_t stride, std::size_t padding,
                          bool need_dx) {
  std::vector<double> cols;
  conv2d(x, f, nullptr, stride, padding, &cols);
  return conv2d_backward_cols(cols, x.shape(), f, g, stride, padding, need_dx);
}

Tensor elementwise_mul(const Tensor& x, const Tensor& k) {
  require_same_shape(x.shape(), k.shape(), "elementwise_mul");
  Tensor y(x.shape());
  const std::size_t n = x.size();
#pragma omp parallel for simd schedule(static) if (n > kParallelMin)
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * k[i];
  return y;
}

namespace {

std::size_t sample_count(const Tensor& x, const Tensor& k, const char* what) {
  if (x.rank() != k.rank() + 1 || !std::equal(k.shape().begin(), k.shape().end(), x.shape().begin() + 1)) {
    throw DimensionError(std::string(what) + ": input " + shape_to_string(x.shape()) +
                         " is not a batch of key-shaped samples " + shape_to_string(k.shape()));
  }
  return x.dim(0);
}

}  // namespace

Tensor scale_broadcast(const Tensor& x, const Tensor& k) {
  const std::size_t batch = sample_count(x, k, "scale_broadcast"), n = k.size();
  Tensor y(x.shape());
#pragma omp parallel for schedule(static) if (x.size() > kParallelMin)
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = x.data() + b * n;
    double* dst = y.data() + b * n;
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] * k[i];
  }
  return y;
}

Tensor scale_broadcast_key_grad(const Tensor& x, const Tensor& g) {
  require_same_shape(x.shape(), g.shape(), "scale_broadcast_key_grad");
  Shape sample(x.shape().begin() + 1, x.shape().end());
  Tensor dk(sample);
  const std::size_t batch = x.dim(0), n = dk.size();
#pragma omp parallel for schedule(static) if (x.size() > kParallelMin)
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) acc += g[b * n + i] * x[b * n + i];
    dk[i] = acc;
  }
  return dk;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  const std::size_t n = x.size();
#pragma omp parallel for simd schedule(static) if (n > kParallelMin)
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& g) {
  require_same_shape(x.shape(), g.shape(), "relu_backward");
  Tensor dx(x.shape());
  const std::size_t n = x.size();
#pragma omp parallel for simd schedule(static) if (n > kParallelMin)
  for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > 0.0 ? g[i] : 0.0;
  return dx;
}

PoolResult maxpool2x2(const Tensor& x) {
  const auto ib = detail::image_batch(x.shape(), "maxpool2x2");
  if (ib.h < 2 || ib.w < 2) throw DimensionError("maxpool2x2 needs at least 2x2 input, got " + shape_to_string(x.shape()));
  const std::size_t oh = ib.h / 2, ow = ib.w / 2, planes = ib.batch * ib.c;
  PoolResult r{Tensor(detail::image_shape(ib, ib.c, oh, ow)), {}};
  r.argmax.resize(r.y.size());
#pragma omp parallel for schedule(static) if (x.size() > kParallelMin)
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * ib.h * ib.w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t i0 = base + 2 * oy * ib.w + 2 * ox;
        std::size_t best = i0;
        if (x[i0 + 1] > x[best]) best = i0 + 1;
        if (x[i0 + ib.w] > x[best]) best = i0 + ib.w;
        if (x[i0 + ib.w + 1] > x[best]) best = i0 + ib.w + 1;
        const std::size_t o = (p * oh + oy) * ow + ox;
        r.y[o] = x[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

Tensor maxpool2x2_backward(const Tensor& g, const std::vector<std::uint32_t>& argmax, const Shape& input_shape) {
  if (argmax.size() != g.size()) throw StateError("maxpool2x2_backward: argmax record does not match gradient");
  Tensor dx(input_shape);
  // 2x2 windows do not overlap, so every input receives at most one write.
  const std::size_t n = g.size();
#pragma omp parallel for schedule(static) if (n > kParallelMin)
  for (std::size_t o = 0; o < n; ++o) dx[argmax[o]] += g[o];
  return dx;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  detail::check_labels(logits, labels.size());
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw InputError("label " + std::to_string(labels[i]) + " out of range for " + std::to_string(classes) +
                       " classes");
    }
  }
  LossResult r{0.0, Tensor(logits.shape())};
  std::vector<double> row_loss(batch);
  const double inv_batch = 1.0 / static_cast<double>(batch);
#pragma omp parallel for schedule(static) if (logits.size() > kParallelMin)
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = logits.data() + i * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
    const double lse = mx + std::log(sum);
    const auto label = static_cast<std::size_t>(labels[i]);
    row_loss[i] = lse - row[label];
    for (std::size_t c = 0; c < classes; ++c) {
      r.dlogits[i * classes + c] = (std::exp(row[c] - lse) - (c == label ? 1.0 : 0.0)) * inv_batch;
    }
  }
  for (double l : row_loss) r.loss += l;
  r.loss *= inv_batch;
  return r;
}

Tensor shift_channels(const Tensor& x, std::span<const std::int64_t> shifts, bool inverse) {
  const auto ib = detail::image_batch(x.shape(), "shift_channels");
  if (shifts.size() != ib.c) {
    throw DimensionError("shift_channels: " + std::to_string(shifts.size()) + " shifts for " + std::to_string(ib.c) +
                         " channels");
  }
  const std::size_t n = ib.h * ib.w, planes = ib.batch * ib.c;
  Tensor y(x.shape());
#pragma omp parallel for schedule(static) if (x.size() > kParallelMin)
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t s = detail::normalise_shift(shifts[p % ib.c], n);
    // Forward: dst[(i+s) mod n] = src[i], done as two contiguous block copies.
    const std::size_t head = inverse ? s : n - s;
    const double* src = x.data() + p * n;
    double* dst = y.data() + p * n;
    std::memcpy(dst, src + head, (n - head) * sizeof(double));
    std::memcpy(dst + (n - head), src, head * sizeof(double));
  }
  return y;
}

}  // namespace dnnshield::kernels
