#include "dnnshield/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dnnshield/errors.hpp"
#include "dnnshield/kernels.hpp"
#include "dnnshield/rng.hpp"

namespace dnnshield {

void Gradients::zero() {
  for (auto& t : weight) t.fill(0.0);
  for (auto& t : bias) t.fill(0.0);
  for (auto& [id, t] : keys) t.fill(0.0);
}

namespace {

void accumulate(Tensor& dst, const Tensor& src) {
  require_same_shape(dst.shape(), src.shape(), "gradient accumulation");
  double* d = dst.data();
  const double* s = src.data();
  const std::size_t n = dst.size();
  for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

Shape with_batch(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

}  // namespace

ModelGraph::ModelGraph(std::string name, Shape input_shape, std::vector<LayerDescriptor> layers)
    : name_(std::move(name)), input_shape_(std::move(input_shape)) {
  if (input_shape_.empty() || shape_numel(input_shape_) == 0) throw DimensionError("model input shape must be nonempty");
  layers_.reserve(layers.size());
  for (auto& d : layers) {
    Layer l{std::move(d), {}, {}};
    if (l.desc.kind == LayerKind::Linear) {
      l.weight = Tensor({l.desc.out_features, l.desc.in_features});
      l.bias = Tensor({l.desc.out_features});
    } else if (l.desc.kind == LayerKind::Conv2d) {
      l.weight = Tensor({l.desc.out_channels, l.desc.in_channels, l.desc.kernel, l.desc.kernel});
      l.bias = Tensor({l.desc.out_channels});
    }
    layers_.push_back(std::move(l));
  }
  shapes_ = infer_shapes(input_shape_, layers_);
}

std::vector<LayerDescriptor> ModelGraph::descriptors() const {
  std::vector<LayerDescriptor> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) out.push_back(l.desc);
  return out;
}

std::vector<Shape> ModelGraph::infer_shapes(const Shape& input, const std::vector<Layer>& layers) {
  std::vector<Shape> shapes{input};
  shapes.reserve(layers.size() + 1);
  for (const auto& l : layers) shapes.push_back(infer_output_shape(l.desc, shapes.back()));
  return shapes;
}

void ModelGraph::reinfer_shapes() { shapes_ = infer_shapes(input_shape_, layers_); }

void ModelGraph::initialize_layer(std::size_t index, std::uint64_t seed) {
  auto& l = layers_.at(index);
  if (!has_parameters(l.desc.kind)) return;
  const std::size_t fan_in = l.weight.size() / l.weight.dim(0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Rng rng(seed);
  for (auto& v : l.weight.storage()) v = rng.uniform(-bound, bound);
  for (auto& v : l.bias.storage()) v = rng.uniform(-bound, bound);
}

void ModelGraph::initialize(std::uint64_t seed) {
  Rng master(seed);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto layer_seed = master.next_u64();
    initialize_layer(i, layer_seed);
  }
}

void ModelGraph::validate() const {
  std::set<std::string> used;
  const std::size_t last = output_layer_index();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& d = layers_[i].desc;
    if (!is_protection(d.kind)) {
      if (d.key_id) throw ProtectionWiringError("layer " + std::to_string(i) + " (" + to_string(d.kind) +
                                                ") is not a protection layer but references a key");
      continue;
    }
    if (!d.key_id) throw ProtectionWiringError("protection layer " + std::to_string(i) + " has no key id");
    if (!used.insert(*d.key_id).second) throw ProtectionWiringError("key '" + *d.key_id + "' is used twice");
    if (i > last) throw ProtectionWiringError("protection layer " + std::to_string(i) + " follows the output layer");
    if (!keys_.contains(*d.key_id))
      throw ProtectionWiringError("protection layer " + std::to_string(i) + " references unknown key '" + *d.key_id + "'");
    const auto& entry = keys_.get(*d.key_id);
    if ((d.kind == LayerKind::Hadamard) != (entry.kind() == ProtectionKind::Hadamard))
      throw ProtectionWiringError("layer " + std::to_string(i) + " is " + to_string(d.kind) + " but key '" + entry.id +
                                  "' is " + to_string(entry.kind()));
    const auto& in = shapes_[i];
    if (d.kind == LayerKind::Hadamard) {
      const auto& k = entry.hadamard();
      if (k.values.shape() != in) {
        throw ProtectionWiringError("Hadamard key '" + entry.id + "' has shape " + shape_to_string(k.values.shape()) +
                                    " but layer " + std::to_string(i) + " receives " + shape_to_string(in));
      }
    } else {
      const auto& k = entry.permutation();
      validate_permutation_key(k);
      std::size_t p = i;
      while (p > 0 && layers_[p - 1].desc.kind == LayerKind::ReLU) --p;
      if (p == 0 || layers_[p - 1].desc.kind != LayerKind::Conv2d) {
        throw ProtectionWiringError("permutation layer " + std::to_string(i) + " does not follow a convolution");
      }
      if (in.size() != 3 || k.shifts.size() != in[0] || k.channel_size != in[1] * in[2]) {
        throw ProtectionWiringError("permutation key '" + entry.id + "' does not match layer input " +
                                    shape_to_string(in));
      }
    }
  }
  for (const auto& e : keys_.entries()) {
    if (!used.count(e.id)) throw ProtectionWiringError("key '" + e.id + "' is not used by any layer");
  }
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::size_t ModelGraph::key_value_count() const {
  std::size_t n = 0;
  for (const auto& e : keys_.entries()) {
    n += e.kind() == ProtectionKind::Hadamard ? e.hadamard().values.size() : e.permutation().shifts.size();
  }
  return n;
}

std::vector<std::size_t> ModelGraph::protection_layer_indices(std::optional<ProtectionKind> kind) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto k = layers_[i].desc.kind;
    if (!is_protection(k)) continue;
    if (kind && (k == LayerKind::Hadamard) != (*kind == ProtectionKind::Hadamard)) continue;
    out.push_back(i);
  }
  return out;
}

std::size_t ModelGraph::output_layer_index() const {
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (has_parameters(layers_[i].desc.kind)) return i;
  }
  throw InputError("model has no Linear or Conv2d layer");
}

Tensor ModelGraph::forward(const Tensor& x) const {
  const bool unbatched = x.shape() == input_shape_;
  Tensor a = unbatched ? x.reshaped(with_batch(1, input_shape_)) : x;
  if (a.rank() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), a.shape().begin() + 1)) {
    throw DimensionError("model expects input " + shape_to_string(input_shape_) + " (optionally batched), got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t batch = a.dim(0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    switch (l.desc.kind) {
      case LayerKind::Linear: {
        if (a.rank() != 2) a.reshape({batch, l.desc.in_features});
        a = kernels::matmul_affine(a, l.weight, l.bias);
        if (!l.desc.out_shape.empty()) a.reshape(with_batch(batch, l.desc.out_shape));
        break;
      }
      case LayerKind::Conv2d:
        a = kernels::conv2d(a, l.weight, &l.bias, l.desc.stride, l.desc.padding);
        break;
      case LayerKind::ReLU: a = kernels::relu(a); break;
      case LayerKind::MaxPool2x2: a = kernels::maxpool2x2(a).y; break;
      case LayerKind::Flatten: a.reshape({batch, a.size() / batch}); break;
      case LayerKind::Hadamard: a = hadamard_forward(a, keys_.get(*l.desc.key_id).hadamard()); break;
      case LayerKind::Permutation: a = permutation_forward(a, keys_.get(*l.desc.key_id).permutation()); break;
    }
  }
  if (unbatched) a.reshape(shapes_.back());
  return a;
}

Tensor ModelGraph::forward(const Tensor& x, Tape& tape) const {
  if (x.rank() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), x.shape().begin() + 1)) {
    throw DimensionError("model expects a batched input [batch," + shape_to_string(input_shape_).substr(1) +
                         ", got " + shape_to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t n = layers_.size();
  tape.activations.resize(n + 1);
  tape.cols.resize(n);
  tape.argmax.resize(n);
  tape.activations[0] = x;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = layers_[i];
    const Tensor& a = tape.activations[i];
    Tensor& y = tape.activations[i + 1];
    switch (l.desc.kind) {
      case LayerKind::Linear:
        y = kernels::matmul_affine(a.rank() == 2 ? a : a.reshaped({batch, l.desc.in_features}), l.weight, l.bias);
        if (!l.desc.out_shape.empty()) y.reshape(with_batch(batch, l.desc.out_shape));
        break;
      case LayerKind::Conv2d:
        y = kernels::conv2d(a, l.weight, &l.bias, l.desc.stride, l.desc.padding, &tape.cols[i]);
        break;
      case LayerKind::ReLU: y = kernels::relu(a); break;
      case LayerKind::MaxPool2x2: {
        auto r = kernels::maxpool2x2(a);
        y = std::move(r.y);
        tape.argmax[i] = std::move(r.argmax);
        break;
      }
      case LayerKind::Flatten: y = a.reshaped({batch, a.size() / batch}); break;
      case LayerKind::Hadamard: y = hadamard_forward(a, keys_.get(*l.desc.key_id).hadamard()); break;
      case LayerKind::Permutation: y = permutation_forward(a, keys_.get(*l.desc.key_id).permutation()); break;
    }
  }
  tape.recorded = true;
  return tape.activations.back();
}

Gradients ModelGraph::make_gradients(bool with_keys) const {
  Gradients g;
  g.weight.resize(layers_.size());
  g.bias.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!has_parameters(layers_[i].desc.kind)) continue;
    g.weight[i] = Tensor(layers_[i].weight.shape());
    g.bias[i] = Tensor(layers_[i].bias.shape());
  }
  if (with_keys) {
    for (const auto& e : keys_.entries()) {
      if (e.kind() == ProtectionKind::Hadamard) g.keys.emplace(e.id, Tensor(e.hadamard().values.shape()));
    }
  }
  return g;
}

void ModelGraph::backward(const Tape& tape, const Tensor& dlogits, Gradients& grads,
                          const BackwardOptions& options) const {
  const std::size_t n = layers_.size();
  if (!tape.recorded || tape.activations.size() != n + 1) {
    throw StateError("backward called without a recorded forward pass for this model");
  }
  require_same_shape(dlogits.shape(), tape.activations.back().shape(), "backward upstream gradient");
  if (options.param_grads && (grads.weight.size() != n || grads.bias.size() != n)) {
    throw StateError("gradient store does not match the model layers");
  }
  // Lowest layer index whose input gradient anyone still needs.
  std::size_t stop = n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = layers_[i].desc.kind;
    const bool wants = (options.param_grads && has_parameters(k)) ||
                       (options.key_grads && k == LayerKind::Hadamard && grads.keys.count(*layers_[i].desc.key_id));
    if (wants) {
      stop = i;
      break;
    }
  }
  const std::size_t batch = dlogits.dim(0);
  Tensor g = dlogits;
  for (std::size_t i = n; i-- > stop;) {
    const auto& l = layers_[i];
    const Tensor& a = tape.activations[i];
    const bool need_dx = i > stop;
    switch (l.desc.kind) {
      case LayerKind::Linear: {
        const Tensor x2 = a.rank() == 2 ? a : a.reshaped({batch, l.desc.in_features});
        if (g.rank() != 2) g.reshape({batch, l.desc.out_features});
        auto r = kernels::matmul_affine_backward(x2, l.weight, g, need_dx);
        if (options.param_grads) {
          accumulate(grads.weight[i], r.dw);
          accumulate(grads.bias[i], r.db);
        }
        if (need_dx) g = std::move(r.dx).reshaped(a.shape());
        break;
      }
      case LayerKind::Conv2d: {
        auto r = kernels::conv2d_backward_cols(tape.cols[i], a.shape(), l.weight, g, l.desc.stride, l.desc.padding,
                                               need_dx);
        if (options.param_grads) {
          accumulate(grads.weight[i], r.df);
          accumulate(grads.bias[i], r.db);
        }
        if (need_dx) g = std::move(r.dx);
        break;
      }
      case LayerKind::ReLU: g = kernels::relu_backward(a, g); break;
      case LayerKind::MaxPool2x2: g = kernels::maxpool2x2_backward(g, tape.argmax[i], a.shape()); break;
      case LayerKind::Flatten: g.reshape(a.shape()); break;
      case LayerKind::Hadamard: {
        const auto& key = keys_.get(*l.desc.key_id).hadamard();
        if (options.key_grads) {
          auto it = grads.keys.find(*l.desc.key_id);
          if (it != grads.keys.end()) accumulate(it->second, kernels::scale_broadcast_key_grad(a, g));
        }
        if (need_dx) g = hadamard_forward(g, key);
        break;
      }
      case LayerKind::Permutation:
        g = permutation_backward(g, keys_.get(*l.desc.key_id).permutation());
        break;
    }
  }
}

void ModelGraph::insert_layer(std::size_t index, Layer layer) {
  if (index > layers_.size()) throw InputError("layer index " + std::to_string(index) + " out of range");
  auto copy = layers_;
  copy.insert(copy.begin() + static_cast<std::ptrdiff_t>(index), std::move(layer));
  shapes_ = infer_shapes(input_shape_, copy);
  layers_ = std::move(copy);
}

void ModelGraph::erase_layer(std::size_t index) {
  if (index >= layers_.size()) throw InputError("layer index " + std::to_string(index) + " out of range");
  auto copy = layers_;
  copy.erase(copy.begin() + static_cast<std::ptrdiff_t>(index));
  shapes_ = infer_shapes(input_shape_, copy);
  layers_ = std::move(copy);
}

void ModelGraph::replace_layer(std::size_t index, Layer layer) {
  if (index >= layers_.size()) throw InputError("layer index " + std::to_string(index) + " out of range");
  auto copy = layers_;
  copy[index] = std::move(layer);
  shapes_ = infer_shapes(input_shape_, copy);
  layers_ = std::move(copy);
}

}  // namespace dnnshield
