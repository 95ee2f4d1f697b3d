#include "dnnshield/keys.hpp"

#include <algorithm>

#include "dnnshield/errors.hpp"
#include "dnnshield/rng.hpp"

namespace dnnshield {

const char* to_string(ProtectionKind kind) {
  return kind == ProtectionKind::Hadamard ? "hadamard" : "permutation";
}

ProtectionKind protection_kind_from_string(const std::string& name) {
  if (name == "hadamard") return ProtectionKind::Hadamard;
  if (name == "permutation") return ProtectionKind::Permutation;
  throw PolicyError("unknown protection layer kind '" + name + "'");
}

ProtectionKind kind_of(const ProtectionKey& key) {
  return std::holds_alternative<HadamardKey>(key) ? ProtectionKind::Hadamard : ProtectionKind::Permutation;
}

void validate_permutation_key(const PermutationKey& key) {
  if (key.channel_size < 2) {
    throw KeyError("permutation key needs at least 2 elements per channel, got " + std::to_string(key.channel_size));
  }
  for (std::size_t c = 0; c < key.shifts.size(); ++c) {
    const auto s = key.shifts[c];
    if (s < 1 || s > static_cast<std::int64_t>(key.channel_size) - 1) {
      throw KeyError("permutation shift " + std::to_string(s) + " for channel " + std::to_string(c) +
                     " outside [1, " + std::to_string(key.channel_size - 1) + "]");
    }
  }
}

const HadamardKey& KeyEntry::hadamard() const {
  if (auto* k = std::get_if<HadamardKey>(&key)) return *k;
  throw KeyError("key '" + id + "' is not a Hadamard key");
}

const PermutationKey& KeyEntry::permutation() const {
  if (auto* k = std::get_if<PermutationKey>(&key)) return *k;
  throw KeyError("key '" + id + "' is not a Permutation key");
}

HadamardKey& KeyEntry::hadamard() { return const_cast<HadamardKey&>(std::as_const(*this).hadamard()); }
PermutationKey& KeyEntry::permutation() { return const_cast<PermutationKey&>(std::as_const(*this).permutation()); }

void KeyRegistry::add(KeyEntry entry) {
  if (contains(entry.id)) throw KeyError("duplicate key id '" + entry.id + "'");
  entries_.push_back(std::move(entry));
}

bool KeyRegistry::contains(const std::string& id) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const KeyEntry& e) { return e.id == id; });
}

const KeyEntry& KeyRegistry::get(const std::string& id) const {
  for (const auto& e : entries_) {
    if (e.id == id) return e;
  }
  throw KeyError("unknown key id '" + id + "'");
}

KeyEntry& KeyRegistry::get(const std::string& id) { return const_cast<KeyEntry&>(std::as_const(*this).get(id)); }

void KeyRegistry::remove(const std::string& id) {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const KeyEntry& e) { return e.id == id; });
  if (it == entries_.end()) throw KeyError("unknown key id '" + id + "'");
  entries_.erase(it);
}

std::vector<std::string> KeyRegistry::ids(std::optional<ProtectionKind> kind) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (!kind || e.kind() == *kind) out.push_back(e.id);
  }
  return out;
}

bool operator==(const KeyRegistry& a, const KeyRegistry& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.id != y.id || x.kind() != y.kind() || x.meta.seed != y.meta.seed || x.meta.low != y.meta.low ||
        x.meta.high != y.meta.high) {
      return false;
    }
    if (x.kind() == ProtectionKind::Hadamard ? !(x.hadamard().values == y.hadamard().values)
                                             : !(x.permutation() == y.permutation())) {
      return false;
    }
  }
  return true;
}

HadamardKey generate_hadamard_key(const Shape& shape, double low, double high, std::uint64_t seed) {
  if (shape.empty() || shape_numel(shape) == 0) throw ParameterError("Hadamard key shape must be nonempty");
  if (!(low < high)) {
    throw ParameterError("Hadamard key range must satisfy low < high, got [" + std::to_string(low) + ", " +
                         std::to_string(high) + ")");
  }
  Rng rng(seed);
  HadamardKey key{Tensor(shape)};
  for (auto& v : key.values.storage()) v = rng.uniform(low, high);
  return key;
}

PermutationKey generate_permutation_key(std::size_t channels, std::size_t channel_size, std::uint64_t seed) {
  if (channel_size < 2) {
    throw ParameterError("permutation key needs at least 2 elements per channel, got " + std::to_string(channel_size));
  }
  if (channels == 0) throw ParameterError("permutation key needs at least one channel");
  Rng rng(seed);
  PermutationKey key{std::vector<std::int64_t>(channels), channel_size};
  for (auto& s : key.shifts) s = rng.uniform_int(1, static_cast<std::int64_t>(channel_size) - 1);
  return key;
}

std::vector<double> flatten_hadamard_keys(const KeyRegistry& registry) {
  std::vector<double> out;
  for (const auto& e : registry.entries()) {
    if (e.kind() != ProtectionKind::Hadamard) continue;
    const auto& v = e.hadamard().values.storage();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace dnnshield
