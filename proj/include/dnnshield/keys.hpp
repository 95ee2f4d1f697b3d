#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dnnshield/tensor.hpp"

namespace dnnshield {

enum class ProtectionKind { Hadamard, Permutation };

const char* to_string(ProtectionKind kind);
ProtectionKind protection_kind_from_string(const std::string& name);

// Element-wise scaling factors with exactly the per-sample output shape of the
// preceding layer.
struct HadamardKey {
  Tensor values;
};

// One circular right-shift per output channel of the preceding convolution.
// channel_size is the number of elements per channel (h*w); every legal shift
// lies in [1, channel_size - 1].
struct PermutationKey {
  std::vector<std::int64_t> shifts;
  std::size_t channel_size = 0;

  friend bool operator==(const PermutationKey&, const PermutationKey&) = default;
};

using ProtectionKey = std::variant<HadamardKey, PermutationKey>;

ProtectionKind kind_of(const ProtectionKey& key);

// Throws KeyError unless every shift is in [1, channel_size - 1].
void validate_permutation_key(const PermutationKey& key);

struct KeyMetadata {
  std::uint64_t seed = 0;
  double low = -1.0;   // Hadamard value range, or shift range for Permutation
  double high = 1.0;
};

struct KeyEntry {
  std::string id;
  ProtectionKey key;
  KeyMetadata meta;

  ProtectionKind kind() const { return kind_of(key); }
  const HadamardKey& hadamard() const;
  const PermutationKey& permutation() const;
  HadamardKey& hadamard();
  PermutationKey& permutation();
};

// Insertion-ordered key_id -> key map.
class KeyRegistry {
 public:
  void add(KeyEntry entry);
  bool contains(const std::string& id) const;
  const KeyEntry& get(const std::string& id) const;
  KeyEntry& get(const std::string& id);
  void remove(const std::string& id);

  const std::vector<KeyEntry>& entries() const noexcept { return entries_; }
  std::vector<KeyEntry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  // Ids of every key of the given kind, in insertion order.
  std::vector<std::string> ids(std::optional<ProtectionKind> kind = std::nullopt) const;

  // Registries are equal when ids, kinds, values and metadata all match.
  friend bool operator==(const KeyRegistry& a, const KeyRegistry& b);

 private:
  std::vector<KeyEntry> entries_;
};

HadamardKey generate_hadamard_key(const Shape& shape, double low, double high, std::uint64_t seed);
PermutationKey generate_permutation_key(std::size_t channels, std::size_t channel_size, std::uint64_t seed);

// Concatenation of every Hadamard key in the registry, in insertion order.
std::vector<double> flatten_hadamard_keys(const KeyRegistry& registry);

}  // namespace dnnshield
