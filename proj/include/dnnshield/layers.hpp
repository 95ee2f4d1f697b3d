#pragma once

#include <optional>
#include <string>

#include "dnnshield/keys.hpp"
#include "dnnshield/tensor.hpp"

namespace dnnshield {

enum class LayerKind { Linear, Conv2d, ReLU, MaxPool2x2, Flatten, Hadamard, Permutation };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

bool is_protection(LayerKind kind);
bool has_parameters(LayerKind kind);

struct LayerDescriptor {
  LayerKind kind = LayerKind::ReLU;

  // Linear. in_features counts every trailing element of one input sample.
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  // Optional per-sample output shape for a Linear layer (defaults to
  // [out_features]); lets a dense layer stand in for a shape-preserving one.
  Shape out_shape;

  // Conv2d.
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // Protection layers only.
  std::optional<std::string> key_id;

  // Architectural block index; drives the default placement policy.
  int block = 0;

  static LayerDescriptor linear(std::size_t in, std::size_t out, int block = 0);
  static LayerDescriptor conv2d(std::size_t in_c, std::size_t out_c, std::size_t kernel, int block = 0,
                                std::size_t stride = 1, std::size_t padding = 0);
  static LayerDescriptor relu(int block = 0);
  static LayerDescriptor maxpool2x2(int block = 0);
  static LayerDescriptor flatten(int block = 0);
  static LayerDescriptor protection(ProtectionKind kind, std::string key_id, int block = 0);

  friend bool operator==(const LayerDescriptor&, const LayerDescriptor&) = default;
};

// Per-sample output shape of a layer given its per-sample input shape.
// Throws DimensionError when the layer cannot accept the input.
Shape infer_output_shape(const LayerDescriptor& layer, const Shape& input);

// y = x * key, with the key broadcast over the batch when x carries one more
// leading axis than the key. Shape mismatch raises ProtectionWiringError.
Tensor hadamard_forward(const Tensor& x, const HadamardKey& key);

// Per-channel circular right shift of the row-major flattened h*w plane by
// key.shifts[c]. Accepts [c,h,w] or [batch,c,h,w].
Tensor permutation_forward(const Tensor& x, const PermutationKey& key);

// Inverse (left) shift, applied to upstream gradients.
Tensor permutation_backward(const Tensor& upstream, const PermutationKey& key);

}  // namespace dnnshield
