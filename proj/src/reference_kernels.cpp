#include <cmath>
#include <limits>

#include "dnnshield/kernels.hpp"
#include "kernels_common.hpp"

namespace dnnshield {

ConvGeometry ConvGeometry::make(const Shape& image_chw, const Shape& filter, std::size_t stride,
                                std::size_t padding) {
  if (filter.size() != 4) throw DimensionError("conv2d filter must be [out_c,in_c,kh,kw], got " + shape_to_string(filter));
  if (image_chw.size() != 3) throw DimensionError("conv2d image must be [c,h,w], got " + shape_to_string(image_chw));
  if (stride == 0) throw DimensionError("conv2d stride must be positive");
  ConvGeometry g;
  g.in_c = image_chw[0];
  g.in_h = image_chw[1];
  g.in_w = image_chw[2];
  g.out_c = filter[0];
  g.kh = filter[2];
  g.kw = filter[3];
  g.stride = stride;
  g.padding = padding;
  if (filter[1] != g.in_c) {
    throw DimensionError("conv2d channel mismatch: input " + shape_to_string(image_chw) + " vs filter " +
                         shape_to_string(filter));
  }
  if (g.kh > g.in_h + 2 * padding || g.kw > g.in_w + 2 * padding) {
    throw DimensionError("conv2d kernel " + shape_to_string(filter) + " larger than padded input " +
                         shape_to_string(image_chw));
  }
  return g;
}

namespace reference {

Tensor matmul_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto d = detail::check_affine(x, w, b);
  Tensor y({d.batch, d.out});
  for (std::size_t i = 0; i < d.batch; ++i) {
    for (std::size_t j = 0; j < d.out; ++j) {
      double acc = 0.0;
      for (std::size_t m = 0; m < d.in; ++m) acc += x[i * d.in + m] * w[j * d.in + m];
      y[i * d.out + j] = acc + b[j];
    }
  }
  return y;
}

AffineGrads matmul_affine_backward(const Tensor& x, const Tensor& w, const Tensor& g) {
  const auto d = detail::check_affine(x, w, Tensor({w.dim(0)}));
  require_same_shape(g.shape(), {d.batch, d.out}, "matmul_affine_backward upstream");
  AffineGrads r{Tensor(x.shape()), Tensor(w.shape()), Tensor({d.out})};
  for (std::size_t i = 0; i < d.batch; ++i) {
    for (std::size_t m = 0; m < d.in; ++m) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d.out; ++j) acc += g[i * d.out + j] * w[j * d.in + m];
      r.dx[i * d.in + m] = acc;
    }
  }
  for (std::size_t j = 0; j < d.out; ++j) {
    for (std::size_t m = 0; m < d.in; ++m) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d.batch; ++i) acc += g[i * d.out + j] * x[i * d.in + m];
      r.dw[j * d.in + m] = acc;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < d.batch; ++i) acc += g[i * d.out + j];
    r.db[j] = acc;
  }
  return r;
}

namespace {

double padded_at(const double* img, const ConvGeometry& g, std::size_t c, std::ptrdiff_t y, std::ptrdiff_t x) {
  if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(g.in_h) || x >= static_cast<std::ptrdiff_t>(g.in_w)) {
    return 0.0;
  }
  return img[(c * g.in_h + static_cast<std::size_t>(y)) * g.in_w + static_cast<std::size_t>(x)];
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& f, const Tensor* bias, std::size_t stride, std::size_t padding) {
  const auto ib = detail::image_batch(x.shape(), "conv2d");
  const auto g = ConvGeometry::make({ib.c, ib.h, ib.w}, f.shape(), stride, padding);
  detail::check_bias(bias, g.out_c);
  const std::size_t oh = g.out_h(), ow = g.out_w();
  Tensor y(detail::image_shape(ib, g.out_c, oh, ow));
  const std::size_t in_plane = g.in_c * g.in_h * g.in_w;
  for (std::size_t b = 0; b < ib.batch; ++b) {
    const double* img = x.data() + b * in_plane;
    for (std::size_t co = 0; co < g.out_c; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
                acc += padded_at(img, g, ci, iy, ix) * f[((co * g.in_c + ci) * g.kh + ky) * g.kw + kx];
              }
            }
          }
          if (bias) acc += (*bias)[co];
          y[((b * g.out_c + co) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& f, const Tensor& gy, std::size_t stride,
                          std::size_t padding) {
  const auto ib = detail::image_batch(x.shape(), "conv2d_backward");
  const auto g = ConvGeometry::make({ib.c, ib.h, ib.w}, f.shape(), stride, padding);
  const std::size_t oh = g.out_h(), ow = g.out_w();
  require_same_shape(gy.shape(), detail::image_shape(ib, g.out_c, oh, ow), "conv2d_backward upstream");
  ConvGrads r{Tensor(x.shape()), Tensor(f.shape()), Tensor({g.out_c})};
  const std::size_t in_plane = g.in_c * g.in_h * g.in_w;
  for (std::size_t b = 0; b < ib.batch; ++b) {
    for (std::size_t co = 0; co < g.out_c; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double up = gy[((b * g.out_c + co) * oh + oy) * ow + ox];
          r.db[co] += up;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) ||
                    ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
                  continue;
                }
                const std::size_t xi = b * in_plane + (ci * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                                       static_cast<std::size_t>(ix);
                const std::size_t fi = ((co * g.in_c + ci) * g.kh + ky) * g.kw + kx;
                r.df[fi] += up * x[xi];
                r.dx[xi] += up * f[fi];
              }
            }
          }
        }
      }
    }
  }
  return r;
}

Tensor elementwise_mul(const Tensor& x, const Tensor& k) {
  require_same_shape(x.shape(), k.shape(), "elementwise_mul");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * k[i];
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& g) {
  require_same_shape(x.shape(), g.shape(), "relu_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? g[i] : 0.0;
  return dx;
}

PoolResult maxpool2x2(const Tensor& x) {
  const auto ib = detail::image_batch(x.shape(), "maxpool2x2");
  if (ib.h < 2 || ib.w < 2) throw DimensionError("maxpool2x2 needs at least 2x2 input, got " + shape_to_string(x.shape()));
  const std::size_t oh = ib.h / 2, ow = ib.w / 2;
  PoolResult r{Tensor(detail::image_shape(ib, ib.c, oh, ow)), {}};
  r.argmax.resize(r.y.size());
  for (std::size_t p = 0; p < ib.batch * ib.c; ++p) {
    const std::size_t base = p * ib.h * ib.w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (2 * oy) * ib.w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * oy + dy) * ib.w + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
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
  for (std::size_t o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
  return dx;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  detail::check_labels(logits, labels.size());
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  LossResult r{0.0, Tensor(logits.shape())};
  for (std::size_t i = 0; i < batch; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw InputError("label " + std::to_string(label) + " out of range for " + std::to_string(classes) + " classes");
    }
    const double* row = logits.data() + i * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
    const double lse = mx + std::log(sum);
    r.loss += lse - row[label];
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(row[c] - lse);
      r.dlogits[i * classes + c] = (p - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0)) / static_cast<double>(batch);
    }
  }
  r.loss /= static_cast<double>(batch);
  return r;
}

Tensor shift_channels(const Tensor& x, std::span<const std::int64_t> shifts, bool inverse) {
  const auto ib = detail::image_batch(x.shape(), "shift_channels");
  if (shifts.size() != ib.c) {
    throw DimensionError("shift_channels: " + std::to_string(shifts.size()) + " shifts for " + std::to_string(ib.c) +
                         " channels");
  }
  const std::size_t n = ib.h * ib.w;
  Tensor y(x.shape());
  for (std::size_t b = 0; b < ib.batch; ++b) {
    for (std::size_t c = 0; c < ib.c; ++c) {
      const std::size_t s = detail::normalise_shift(shifts[c], n);
      const double* src = x.data() + (b * ib.c + c) * n;
      double* dst = y.data() + (b * ib.c + c) * n;
      for (std::size_t i = 0; i < n; ++i) {
        if (inverse) {
          dst[i] = src[(i + s) % n];
        } else {
          dst[(i + s) % n] = src[i];
        }
      }
    }
  }
  return y;
}

}  // namespace reference
}  // namespace dnnshield
