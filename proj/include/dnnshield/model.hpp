#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dnnshield/keys.hpp"
#include "dnnshield/layers.hpp"
#include "dnnshield/tensor.hpp"

namespace dnnshield {

struct Layer {
  LayerDescriptor desc;
  Tensor weight;  // Linear [out,in], Conv2d [out_c,in_c,k,k]; empty otherwise
  Tensor bias;    // [out] / [out_c]; empty otherwise
};

// Values recorded by a forward pass that backward needs.
struct Tape {
  std::vector<Tensor> activations;  // activations[i] is the input of layer i; back() is the output
  std::vector<std::vector<double>> cols;
  std::vector<std::vector<std::uint32_t>> argmax;
  bool recorded = false;
};

// Accumulators paired one-to-one with the parameters (and with any Hadamard
// key an attack has marked trainable).
struct Gradients {
  std::vector<Tensor> weight;
  std::vector<Tensor> bias;
  std::map<std::string, Tensor> keys;

  void zero();
};

struct BackwardOptions {
  bool param_grads = true;
  bool key_grads = false;
};

// Ordered layer sequence + parameter store + key registry.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(std::string name, Shape input_shape, std::vector<LayerDescriptor> layers);

  const std::string& name() const noexcept { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<LayerDescriptor> descriptors() const;

  // shape_before(i) is layer i's per-sample input shape; shape_before(num_layers()) the model output.
  const Shape& shape_before(std::size_t i) const { return shapes_.at(i); }
  const Shape& output_shape() const { return shapes_.back(); }
  std::size_t classes() const { return shape_numel(shapes_.back()); }

  KeyRegistry& keys() noexcept { return keys_; }
  const KeyRegistry& keys() const noexcept { return keys_; }

  int epoch() const noexcept { return epoch_; }
  void set_epoch(int epoch) noexcept { epoch_ = epoch; }

  // Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void initialize(std::uint64_t seed);
  void initialize_layer(std::size_t index, std::uint64_t seed);

  // Throws ProtectionWiringError / KeyError when an invariant is broken:
  // dangling or unused key ids, key shapes, permutation predecessors.
  void validate() const;

  std::size_t parameter_count() const;
  std::size_t key_value_count() const;
  std::vector<std::size_t> protection_layer_indices(std::optional<ProtectionKind> kind = std::nullopt) const;
  // Index of the last Linear/Conv2d layer.
  std::size_t output_layer_index() const;

  Tensor forward(const Tensor& x) const;
  Tensor forward(const Tensor& x, Tape& tape) const;
  void backward(const Tape& tape, const Tensor& dlogits, Gradients& grads, const BackwardOptions& options = {}) const;
  Gradients make_gradients(bool with_keys) const;

  // Structural edits. Shapes are re-inferred; a DimensionError leaves the model unchanged.
  void insert_layer(std::size_t index, Layer layer);
  void erase_layer(std::size_t index);
  void replace_layer(std::size_t index, Layer layer);

 private:
  void reinfer_shapes();
  static std::vector<Shape> infer_shapes(const Shape& input, const std::vector<Layer>& layers);

  std::string name_;
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  KeyRegistry keys_;
  int epoch_ = 0;
};

}  // namespace dnnshield
