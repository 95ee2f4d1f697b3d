#include "dnnshield/layers.hpp"

#include <algorithm>

#include "dnnshield/errors.hpp"
#include "dnnshield/kernels.hpp"

namespace dnnshield {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Linear: return "linear";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool2x2: return "maxpool2x2";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Hadamard: return "hadamard";
    case LayerKind::Permutation: return "permutation";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto kind : {LayerKind::Linear, LayerKind::Conv2d, LayerKind::ReLU, LayerKind::MaxPool2x2, LayerKind::Flatten,
                    LayerKind::Hadamard, LayerKind::Permutation}) {
    if (name == to_string(kind)) return kind;
  }
  throw InputError("unknown layer kind '" + name + "'");
}

bool is_protection(LayerKind kind) { return kind == LayerKind::Hadamard || kind == LayerKind::Permutation; }

bool has_parameters(LayerKind kind) { return kind == LayerKind::Linear || kind == LayerKind::Conv2d; }

LayerDescriptor LayerDescriptor::linear(std::size_t in, std::size_t out, int block) {
  LayerDescriptor d;
  d.kind = LayerKind::Linear;
  d.in_features = in;
  d.out_features = out;
  d.block = block;
  return d;
}

LayerDescriptor LayerDescriptor::conv2d(std::size_t in_c, std::size_t out_c, std::size_t kernel, int block,
                                        std::size_t stride, std::size_t padding) {
  LayerDescriptor d;
  d.kind = LayerKind::Conv2d;
  d.in_channels = in_c;
  d.out_channels = out_c;
  d.kernel = kernel;
  d.stride = stride;
  d.padding = padding;
  d.block = block;
  return d;
}

LayerDescriptor LayerDescriptor::relu(int block) {
  LayerDescriptor d;
  d.kind = LayerKind::ReLU;
  d.block = block;
  return d;
}

LayerDescriptor LayerDescriptor::maxpool2x2(int block) {
  LayerDescriptor d;
  d.kind = LayerKind::MaxPool2x2;
  d.block = block;
  return d;
}

LayerDescriptor LayerDescriptor::flatten(int block) {
  LayerDescriptor d;
  d.kind = LayerKind::Flatten;
  d.block = block;
  return d;
}

LayerDescriptor LayerDescriptor::protection(ProtectionKind kind, std::string key_id, int block) {
  LayerDescriptor d;
  d.kind = kind == ProtectionKind::Hadamard ? LayerKind::Hadamard : LayerKind::Permutation;
  d.key_id = std::move(key_id);
  d.block = block;
  return d;
}

Shape infer_output_shape(const LayerDescriptor& layer, const Shape& input) {
  switch (layer.kind) {
    case LayerKind::Linear: {
      if (shape_numel(input) != layer.in_features) {
        throw DimensionError("linear layer expects " + std::to_string(layer.in_features) + " input features, got " +
                             shape_to_string(input));
      }
      Shape out = layer.out_shape.empty() ? Shape{layer.out_features} : layer.out_shape;
      if (shape_numel(out) != layer.out_features) {
        throw DimensionError("linear out_shape " + shape_to_string(out) + " does not hold " +
                             std::to_string(layer.out_features) + " features");
      }
      return out;
    }
    case LayerKind::Conv2d: {
      if (input.size() != 3) throw DimensionError("conv2d expects a [c,h,w] input, got " + shape_to_string(input));
      const auto g = ConvGeometry::make(input, {layer.out_channels, layer.in_channels, layer.kernel, layer.kernel},
                                        layer.stride, layer.padding);
      return {g.out_c, g.out_h(), g.out_w()};
    }
    case LayerKind::MaxPool2x2: {
      if (input.size() != 3 || input[1] < 2 || input[2] < 2) {
        throw DimensionError("maxpool2x2 expects a [c,h,w] input of at least 2x2, got " + shape_to_string(input));
      }
      return {input[0], input[1] / 2, input[2] / 2};
    }
    case LayerKind::Flatten:
      return {shape_numel(input)};
    case LayerKind::Permutation:
      if (input.size() != 3) {
        throw ProtectionWiringError("permutation layer needs a [c,h,w] convolution output, got " +
                                    shape_to_string(input));
      }
      return input;
    case LayerKind::ReLU:
    case LayerKind::Hadamard:
      return input;
  }
  return input;
}

Tensor hadamard_forward(const Tensor& x, const HadamardKey& key) {
  const auto& ks = key.values.shape();
  if (x.shape() == ks) return kernels::elementwise_mul(x, key.values);
  if (x.rank() == ks.size() + 1 && std::equal(ks.begin(), ks.end(), x.shape().begin() + 1)) {
    return kernels::scale_broadcast(x, key.values);
  }
  throw ProtectionWiringError("Hadamard key " + shape_to_string(ks) + " does not match input " +
                              shape_to_string(x.shape()));
}

namespace {

void check_permutation_input(const Tensor& x, const PermutationKey& key) {
  validate_permutation_key(key);
  const auto& s = x.shape();
  if (s.size() != 3 && s.size() != 4) {
    throw ProtectionWiringError("permutation layer expects [c,h,w] or [batch,c,h,w], got " + shape_to_string(s));
  }
  const std::size_t c = s[s.size() - 3], n = s[s.size() - 2] * s[s.size() - 1];
  if (c != key.shifts.size() || n != key.channel_size) {
    throw ProtectionWiringError("permutation key for " + std::to_string(key.shifts.size()) + " channels of " +
                                std::to_string(key.channel_size) + " elements does not match input " +
                                shape_to_string(s));
  }
}

}  // namespace

Tensor permutation_forward(const Tensor& x, const PermutationKey& key) {
  check_permutation_input(x, key);
  return kernels::shift_channels(x, key.shifts, false);
}

Tensor permutation_backward(const Tensor& upstream, const PermutationKey& key) {
  check_permutation_input(upstream, key);
  return kernels::shift_channels(upstream, key.shifts, true);
}

}  // namespace dnnshield
