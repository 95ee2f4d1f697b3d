#pragma once

// Checkpoint container, all integers little-endian:
//
//   "DNSH" | u8 version | u64 header_len | header JSON
//          | u64 key_section_len | key section | parameter blob
//
// key section = u64 manifest_len | key manifest JSON | key blob
//
// The header JSON holds the model name, input shape, layer list, epoch and a
// manifest of (layer, tensor, shape, offset, count) for the parameter blob.
// The key section depends only on the registry, so every checkpoint of one
// training run carries a byte-identical key section.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dnnshield/model.hpp"

namespace dnnshield {

inline constexpr std::uint8_t kCheckpointVersion = 1;

using Bytes = std::vector<std::uint8_t>;

Bytes serialize_checkpoint(const ModelGraph& model);
ModelGraph deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_checkpoint(const std::filesystem::path& path);

Bytes serialize_key_section(const KeyRegistry& keys);
KeyRegistry parse_key_section(std::span<const std::uint8_t> section, std::size_t base_offset = 0);

// Raw key-section bytes of a checkpoint file, without parsing the parameters.
Bytes read_key_section(const std::filesystem::path& path);
Bytes extract_key_section(std::span<const std::uint8_t> checkpoint);

// Hex SHA-256 of the serialized key section.
std::string key_digest(const KeyRegistry& keys);
std::string sha256_hex(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace dnnshield
