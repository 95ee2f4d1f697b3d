#pragma once

// Shape checks shared by the reference and parallel kernels.

#include <string>

#include "dnnshield/errors.hpp"
#include "dnnshield/kernels.hpp"

namespace dnnshield::detail {

struct AffineDims {
  std::size_t batch, in, out;
};

inline AffineDims check_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2) {
    throw DimensionError("matmul_affine expects x[batch,in] and w[out,in], got x" + shape_to_string(x.shape()) +
                         " and w" + shape_to_string(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw DimensionError("matmul_affine inner extents disagree: x" + shape_to_string(x.shape()) + " vs w" +
                         shape_to_string(w.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw DimensionError("matmul_affine bias b" + shape_to_string(b.shape()) + " does not match w" +
                         shape_to_string(w.shape()));
  }
  return {x.dim(0), x.dim(1), w.dim(0)};
}

struct ImageBatch {
  std::size_t batch, c, h, w;
  bool unbatched;
};

inline ImageBatch image_batch(const Shape& s, const char* what) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], true};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], false};
  throw DimensionError(std::string(what) + " expects [c,h,w] or [batch,c,h,w], got " + shape_to_string(s));
}

inline Shape image_shape(const ImageBatch& ib, std::size_t c, std::size_t h, std::size_t w) {
  if (ib.unbatched) return {c, h, w};
  return {ib.batch, c, h, w};
}

inline void check_bias(const Tensor* bias, std::size_t out_c) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != out_c)) {
    throw DimensionError("conv2d bias" + shape_to_string(bias->shape()) + " does not match " +
                         std::to_string(out_c) + " output channels");
  }
}

inline void check_labels(const Tensor& logits, std::size_t n_labels) {
  if (logits.rank() != 2) throw DimensionError("softmax_cross_entropy expects logits[batch,classes]");
  if (n_labels != logits.dim(0)) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(n_labels) + " labels for batch of " +
                         std::to_string(logits.dim(0)));
  }
}

inline std::size_t normalise_shift(std::int64_t s, std::size_t n) {
  const auto m = static_cast<std::int64_t>(n);
  return static_cast<std::size_t>(((s % m) + m) % m);
}

}  // namespace dnnshield::detail
