#include "dnnshield/architecture.hpp"

#include <algorithm>
#include <fstream>

#include "dnnshield/errors.hpp"

namespace dnnshield {

using nlohmann::json;

namespace {

std::uint64_t position_seed(std::uint64_t seed, std::size_t m) {
  // splitmix64 finaliser over (seed, position) so each position's key is
  // independent of which other positions are selected.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (m + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : it->get<T>();
}

}  // namespace

std::string position_key_id(std::size_t m) { return "P" + std::to_string(m + 1); }

json layer_to_json(const LayerDescriptor& d) {
  json j{{"kind", to_string(d.kind)}, {"block", d.block}};
  switch (d.kind) {
    case LayerKind::Linear:
      j["in_features"] = d.in_features;
      j["out_features"] = d.out_features;
      if (!d.out_shape.empty()) j["out_shape"] = d.out_shape;
      break;
    case LayerKind::Conv2d:
      j["in_channels"] = d.in_channels;
      j["out_channels"] = d.out_channels;
      j["kernel"] = d.kernel;
      j["stride"] = d.stride;
      j["padding"] = d.padding;
      break;
    case LayerKind::Hadamard:
    case LayerKind::Permutation:
      if (d.key_id) j["key_id"] = *d.key_id;
      break;
    default:
      break;
  }
  return j;
}

LayerDescriptor layer_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind")) throw InputError("layer entry needs a \"kind\" field: " + j.dump());
  LayerDescriptor d;
  d.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  d.block = get_or<int>(j, "block", 0);
  try {
    switch (d.kind) {
      case LayerKind::Linear:
        d.in_features = j.at("in_features").get<std::size_t>();
        d.out_features = j.at("out_features").get<std::size_t>();
        if (j.contains("out_shape")) d.out_shape = j.at("out_shape").get<Shape>();
        if (d.in_features == 0 || d.out_features == 0) throw InputError("linear extents must be positive");
        break;
      case LayerKind::Conv2d:
        d.in_channels = j.at("in_channels").get<std::size_t>();
        d.out_channels = j.at("out_channels").get<std::size_t>();
        d.kernel = j.at("kernel").get<std::size_t>();
        d.stride = get_or<std::size_t>(j, "stride", 1);
        d.padding = get_or<std::size_t>(j, "padding", 0);
        if (d.in_channels == 0 || d.out_channels == 0 || d.kernel == 0 || d.stride == 0) {
          throw InputError("conv2d extents and stride must be positive");
        }
        break;
      case LayerKind::Hadamard:
      case LayerKind::Permutation:
        if (j.contains("key_id")) d.key_id = j.at("key_id").get<std::string>();
        break;
      default:
        break;
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed layer entry ") + j.dump() + ": " + e.what());
  }
  return d;
}

json policy_to_json(const PlacementPolicy& p) {
  json j{{"kind", to_string(p.kind)},
         {"post_activation", p.post_activation},
         {"range", {p.low, p.high}},
         {"seed", p.seed}};
  if (p.mode == PlacementPolicy::Mode::PerBlockDefault) {
    j["placement"] = "per_block_default";
  } else {
    j["placement"] = p.layer_indices;
  }
  return j;
}

PlacementPolicy policy_from_json(const json& j) {
  PlacementPolicy p;
  try {
    p.kind = protection_kind_from_string(get_or<std::string>(j, "kind", "hadamard"));
    p.post_activation = get_or<bool>(j, "post_activation", false);
    p.seed = get_or<std::uint64_t>(j, "seed", 0);
    if (j.contains("range")) {
      const auto r = j.at("range").get<std::vector<double>>();
      if (r.size() != 2) throw PolicyError("protection range must be [low, high]");
      p.low = r[0];
      p.high = r[1];
    }
    const json placement = j.value("placement", json("per_block_default"));
    if (placement.is_string()) {
      if (placement.get<std::string>() != "per_block_default") {
        throw PolicyError("unknown placement '" + placement.get<std::string>() + "'");
      }
      p.mode = PlacementPolicy::Mode::PerBlockDefault;
    } else {
      p.mode = PlacementPolicy::Mode::Explicit;
      p.layer_indices = placement.get<std::vector<std::size_t>>();
    }
  } catch (const json::exception& e) {
    throw PolicyError(std::string("malformed protection policy: ") + e.what());
  }
  return p;
}

ArchitectureConfig architecture_from_json(const json& j) {
  ArchitectureConfig c;
  try {
    c.name = get_or<std::string>(j, "name", "custom");
    c.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& l : j.at("layers")) c.layers.push_back(layer_from_json(l));
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed architecture config: ") + e.what());
  }
  if (c.layers.empty()) throw InputError("architecture config has no layers");
  if (j.contains("protection") && !j.at("protection").is_null()) c.protection = policy_from_json(j.at("protection"));
  return c;
}

json architecture_to_json(const ArchitectureConfig& c) {
  json layers = json::array();
  for (const auto& l : c.layers) layers.push_back(layer_to_json(l));
  json j{{"name", c.name}, {"input_shape", c.input_shape}, {"layers", layers}};
  if (c.protection) j["protection"] = policy_to_json(*c.protection);
  return j;
}

ArchitectureConfig load_architecture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open architecture config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("architecture config " + path.string() + " is not valid JSON: " + e.what());
  }
  return architecture_from_json(j);
}

ArchitectureConfig cnn_architecture(const Shape& input_shape, std::size_t classes) {
  if (input_shape.size() != 3) throw DimensionError("cnn expects a [c,h,w] input, got " + shape_to_string(input_shape));
  using D = LayerDescriptor;
  ArchitectureConfig c;
  c.name = "cnn";
  c.input_shape = input_shape;
  const std::size_t h = ((input_shape[1] - 4) / 2 - 4) / 2;
  const std::size_t w = ((input_shape[2] - 4) / 2 - 4) / 2;
  c.layers = {D::conv2d(input_shape[0], 32, 5, 0), D::relu(0), D::maxpool2x2(0),
              D::conv2d(32, 64, 5, 1),             D::relu(1), D::maxpool2x2(1),
              D::flatten(1),
              D::linear(64 * h * w, 512, 2),       D::relu(2),
              D::linear(512, 256, 3),              D::relu(3),
              D::linear(256, classes, 4)};
  return c;
}

ArchitectureConfig fcn_architecture(const Shape& input_shape, std::size_t classes) {
  using D = LayerDescriptor;
  ArchitectureConfig c;
  c.name = "fcn";
  c.input_shape = input_shape;
  const std::size_t features = shape_numel(input_shape);
  if (input_shape.size() > 1) c.layers.push_back(D::flatten(0));
  c.layers.insert(c.layers.end(), {D::linear(features, 15, 0), D::relu(0),
                                   D::linear(15, 10, 1),       D::relu(1),
                                   D::linear(10, classes, 2)});
  return c;
}

ArchitectureConfig resolve_architecture(const std::string& name_or_path) {
  if (name_or_path == "cnn") return cnn_architecture();
  if (name_or_path == "fcn") return fcn_architecture();
  return load_architecture(name_or_path);
}

ModelGraph build_model(const ArchitectureConfig& config, std::uint64_t init_seed) {
  for (const auto& l : config.layers) {
    if (is_protection(l.kind)) {
      throw InputError("architecture layer lists must not contain protection layers; use the protection policy");
    }
  }
  ModelGraph m(config.name, config.input_shape, config.layers);
  m.initialize(init_seed);
  return m;
}

std::vector<std::size_t> protectable_layers(const ModelGraph& model) {
  const std::size_t last = model.output_layer_index();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < last; ++i) {
    if (has_parameters(model.layer(i).desc.kind)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> select_positions(const ModelGraph& model, const PlacementPolicy& policy) {
  const auto candidates = protectable_layers(model);
  std::vector<std::size_t> out;
  if (policy.mode == PlacementPolicy::Mode::PerBlockDefault) {
    int seen_block = -1;
    bool any = false;
    for (auto i : candidates) {
      const auto& d = model.layer(i).desc;
      if (any && d.block == seen_block) continue;
      seen_block = d.block;
      any = true;
      if (policy.kind == ProtectionKind::Permutation && d.kind != LayerKind::Conv2d) continue;
      out.push_back(i);
    }
    if (out.empty()) throw PolicyError("the default placement finds no eligible layer for this policy");
    return out;
  }
  if (policy.layer_indices.empty()) throw PolicyError("explicit placement lists no layers");
  const std::size_t last = model.output_layer_index();
  for (auto i : policy.layer_indices) {
    if (i >= model.num_layers()) throw PolicyError("placement index " + std::to_string(i) + " out of range");
    const auto kind = model.layer(i).desc.kind;
    if (i == last) throw PolicyError("no protection layer may follow the output layer (index " + std::to_string(i) + ")");
    if (!has_parameters(kind)) {
      throw PolicyError("placement index " + std::to_string(i) + " is a " + to_string(kind) +
                        " layer, not Linear/Conv2d");
    }
    if (policy.kind == ProtectionKind::Permutation && kind != LayerKind::Conv2d) {
      throw PolicyError("a Permutation layer cannot follow the Linear layer at index " + std::to_string(i));
    }
    out.push_back(i);
  }
  std::sort(out.begin(), out.end());
  if (std::adjacent_find(out.begin(), out.end()) != out.end()) throw PolicyError("placement lists a layer twice");
  return out;
}

ModelGraph insert_protection_layers(const ModelGraph& model, const PlacementPolicy& policy) {
  if (!model.protection_layer_indices().empty() || !model.keys().empty()) {
    throw PolicyError("model already carries protection layers");
  }
  if (policy.kind == ProtectionKind::Hadamard && !(policy.low < policy.high)) {
    throw PolicyError("Hadamard key range must satisfy low < high");
  }
  const auto positions = select_positions(model, policy);
  const auto candidates = protectable_layers(model);
  ModelGraph out = model;
  // Insert from the back so earlier indices stay valid.
  for (auto it = positions.rbegin(); it != positions.rend(); ++it) {
    const std::size_t i = *it;
    const std::size_t m = static_cast<std::size_t>(std::find(candidates.begin(), candidates.end(), i) - candidates.begin());
    std::size_t at = i + 1;
    if (policy.post_activation && at < out.num_layers() && out.layer(at).desc.kind == LayerKind::ReLU) ++at;
    const auto id = position_key_id(m);
    const Shape& shape = out.shape_before(at);
    const auto seed = position_seed(policy.seed, m);
    KeyEntry entry;
    entry.id = id;
    if (policy.kind == ProtectionKind::Hadamard) {
      entry.key = generate_hadamard_key(shape, policy.low, policy.high, seed);
      entry.meta = {seed, policy.low, policy.high};
    } else {
      if (shape.size() != 3) throw PolicyError("permutation layer needs a [c,h,w] convolution output");
      const std::size_t n = shape[1] * shape[2];
      if (n < 2) throw PolicyError("convolution output at layer " + std::to_string(i) + " has one element per channel");
      entry.key = generate_permutation_key(shape[0], n, seed);
      entry.meta = {seed, 1.0, static_cast<double>(n - 1)};
    }
    out.keys().add(std::move(entry));
    out.insert_layer(at, Layer{LayerDescriptor::protection(policy.kind, id, model.layer(i).desc.block), {}, {}});
  }
  // Registry order follows layer order.
  KeyRegistry ordered;
  for (auto idx : out.protection_layer_indices()) ordered.add(out.keys().get(*out.layer(idx).desc.key_id));
  out.keys() = std::move(ordered);
  out.validate();
  return out;
}

}  // namespace dnnshield
