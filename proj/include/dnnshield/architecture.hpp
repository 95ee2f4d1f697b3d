#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dnnshield/model.hpp"

namespace dnnshield {

struct PlacementPolicy {
  enum class Mode { PerBlockDefault, Explicit };

  ProtectionKind kind = ProtectionKind::Hadamard;
  Mode mode = Mode::PerBlockDefault;
  // Explicit mode: indices into the unprotected layer list (Linear/Conv2d only).
  std::vector<std::size_t> layer_indices;
  // Insert after the activation that follows the selected layer instead of before it.
  bool post_activation = false;
  double low = -1.0;
  double high = 1.0;
  std::uint64_t seed = 0;
};

// Layer list plus an optional protection annotation, as stored in a config file.
struct ArchitectureConfig {
  std::string name;
  Shape input_shape;
  std::vector<LayerDescriptor> layers;
  std::optional<PlacementPolicy> protection;
};

ArchitectureConfig architecture_from_json(const nlohmann::json& j);
nlohmann::json architecture_to_json(const ArchitectureConfig& config);
ArchitectureConfig load_architecture(const std::filesystem::path& path);

nlohmann::json layer_to_json(const LayerDescriptor& d);
LayerDescriptor layer_from_json(const nlohmann::json& j);
nlohmann::json policy_to_json(const PlacementPolicy& p);
PlacementPolicy policy_from_json(const nlohmann::json& j);

// Built-in desk-scale architectures: the convolutional network
// (conv5-32, pool, conv5-64, pool, 512, 256, classes) and the fully connected
// network (15, 10, classes).
ArchitectureConfig cnn_architecture(const Shape& input_shape = {1, 28, 28}, std::size_t classes = 10);
ArchitectureConfig fcn_architecture(const Shape& input_shape = {1, 28, 28}, std::size_t classes = 10);

// Resolves "cnn", "fcn" or a path to a JSON config.
ArchitectureConfig resolve_architecture(const std::string& name_or_path);

// Unprotected model with fan-in initialised weights.
ModelGraph build_model(const ArchitectureConfig& config, std::uint64_t init_seed);

// Linear/Conv2d layers that may carry a protection layer (every one except the
// output layer), in order. Position m (0-based) gets key id "P<m+1>".
std::vector<std::size_t> protectable_layers(const ModelGraph& model);

// Layers the policy selects, validated against the kind rules.
std::vector<std::size_t> select_positions(const ModelGraph& model, const PlacementPolicy& policy);

// New model with one protection layer after each selected layer and fresh keys.
// The input must not already contain protection layers.
ModelGraph insert_protection_layers(const ModelGraph& model, const PlacementPolicy& policy);

// Key id of the protection layer that follows protectable position m.
std::string position_key_id(std::size_t m);

}  // namespace dnnshield
