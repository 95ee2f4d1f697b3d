#include "dnnshield/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dnnshield/architecture.hpp"
#include "dnnshield/errors.hpp"

namespace dnnshield {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'D', 'N', 'S', 'H'};

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_bytes(Bytes& out, const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

void put_f64s(Bytes& out, std::span<const double> values) {
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t base) : bytes_(bytes), base_(base) {}

  std::size_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated checkpoint: ") + what + " needs " + std::to_string(n) +
                            " bytes, " + std::to_string(remaining()) + " left",
                        offset());
    }
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::span<const std::uint8_t> take(std::uint64_t n, const char* what) {
    if (n > remaining()) {
      throw FormatError(std::string("truncated checkpoint: ") + what + " declares " + std::to_string(n) +
                            " bytes, " + std::to_string(remaining()) + " left",
                        offset());
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  json take_json(std::uint64_t n, const char* what) {
    const std::size_t at = offset();
    auto s = take(n, what);
    try {
      return json::parse(s.begin(), s.end());
    } catch (const json::exception& e) {
      throw FormatError(std::string(what) + " is not valid JSON: " + e.what(), at);
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

std::uint64_t read_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

// Slice [offset, offset + 8*count) of a blob, checked.
const std::uint8_t* blob_range(std::span<const std::uint8_t> blob, std::uint64_t off, std::uint64_t count,
                               std::size_t blob_base, const std::string& what) {
  if (count > blob.size() / 8 || off > blob.size() || blob.size() - off < count * 8) {
    throw FormatError(what + " lies outside its blob (offset " + std::to_string(off) + ", " + std::to_string(count) +
                          " values)",
                      blob_base + std::min<std::uint64_t>(off, blob.size()));
  }
  return blob.data() + off;
}

std::size_t split_header(Reader& r) {
  r.need(4, "magic");
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic, not a DNSH checkpoint", 0);
  const std::size_t at = r.offset();
  const auto version = r.u8("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), at);
  }
  return r.offset();
}

}  // namespace

Bytes serialize_key_section(const KeyRegistry& keys) {
  json manifest = json::array();
  Bytes blob;
  for (const auto& e : keys.entries()) {
    json m{{"id", e.id},
           {"kind", to_string(e.kind())},
           {"seed", e.meta.seed},
           {"low", e.meta.low},
           {"high", e.meta.high},
           {"offset", blob.size()}};
    if (e.kind() == ProtectionKind::Hadamard) {
      const auto& t = e.hadamard().values;
      m["shape"] = t.shape();
      m["count"] = t.size();
      put_f64s(blob, t.values());
    } else {
      const auto& k = e.permutation();
      m["channel_size"] = k.channel_size;
      m["count"] = k.shifts.size();
      for (auto s : k.shifts) put_u64(blob, static_cast<std::uint64_t>(s));
    }
    manifest.push_back(std::move(m));
  }
  const std::string text = manifest.dump();
  Bytes out;
  put_u64(out, text.size());
  put_bytes(out, text);
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

KeyRegistry parse_key_section(std::span<const std::uint8_t> section, std::size_t base_offset) {
  Reader r(section, base_offset);
  const auto len = r.u64("key manifest length");
  const std::size_t manifest_at = r.offset();
  const json manifest = r.take_json(len, "key manifest");
  const std::size_t blob_base = r.offset();
  const auto blob = section.subspan(section.size() - r.remaining());
  KeyRegistry keys;
  std::uint64_t expected_end = 0;
  try {
    for (const auto& m : manifest) {
      KeyEntry e;
      e.id = m.at("id").get<std::string>();
      e.meta = {m.at("seed").get<std::uint64_t>(), m.at("low").get<double>(), m.at("high").get<double>()};
      const auto off = m.at("offset").get<std::uint64_t>();
      const auto count = m.at("count").get<std::uint64_t>();
      const auto* p = blob_range(blob, off, count, blob_base, "key '" + e.id + "'");
      const auto kind = protection_kind_from_string(m.at("kind").get<std::string>());
      if (kind == ProtectionKind::Hadamard) {
        const auto shape = m.at("shape").get<Shape>();
        if (shape.empty() || shape_numel(shape) != count) {
          throw FormatError("key '" + e.id + "' shape " + shape_to_string(shape) + " does not hold " +
                                std::to_string(count) + " values",
                            manifest_at);
        }
        std::vector<double> values(count);
        for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(read_le(p + 8 * i));
        e.key = HadamardKey{Tensor(shape, std::move(values))};
      } else {
        PermutationKey k;
        k.channel_size = m.at("channel_size").get<std::size_t>();
        k.shifts.resize(count);
        for (std::size_t i = 0; i < count; ++i) k.shifts[i] = static_cast<std::int64_t>(read_le(p + 8 * i));
        try {
          validate_permutation_key(k);
        } catch (const KeyError& err) {
          throw FormatError(std::string("invalid stored key: ") + err.what(), blob_base + off);
        }
        e.key = std::move(k);
      }
      expected_end = std::max<std::uint64_t>(expected_end, off + 8 * count);
      keys.add(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed key manifest: ") + e.what(), manifest_at);
  } catch (const KeyError& e) {
    throw FormatError(std::string("malformed key manifest: ") + e.what(), manifest_at);
  } catch (const PolicyError& e) {
    throw FormatError(std::string("malformed key manifest: ") + e.what(), manifest_at);
  }
  if (expected_end != blob.size()) {
    throw FormatError("key blob has " + std::to_string(blob.size()) + " bytes, manifest describes " +
                          std::to_string(expected_end),
                      blob_base);
  }
  return keys;
}

Bytes serialize_checkpoint(const ModelGraph& model) {
  json layers = json::array();
  for (const auto& l : model.layers()) layers.push_back(layer_to_json(l.desc));
  json params = json::array();
  Bytes blob;
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const auto& l = model.layer(i);
    if (!has_parameters(l.desc.kind)) continue;
    for (const auto* which : {"weight", "bias"}) {
      const Tensor& t = std::string(which) == "weight" ? l.weight : l.bias;
      params.push_back({{"layer", i}, {"tensor", which}, {"shape", t.shape()}, {"offset", blob.size()}, {"count", t.size()}});
      put_f64s(blob, t.values());
    }
  }
  const json header{{"format", "dnnshield-checkpoint"},
                    {"name", model.name()},
                    {"input_shape", model.input_shape()},
                    {"epoch", model.epoch()},
                    {"layers", layers},
                    {"parameters", params}};
  const std::string text = header.dump();
  const Bytes keys = serialize_key_section(model.keys());

  Bytes out(kMagic, kMagic + 4);
  out.push_back(kCheckpointVersion);
  put_u64(out, text.size());
  put_bytes(out, text);
  put_u64(out, keys.size());
  out.insert(out.end(), keys.begin(), keys.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

ModelGraph deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, 0);
  split_header(r);
  const auto header_len = r.u64("header length");
  const std::size_t header_at = r.offset();
  const json header = r.take_json(header_len, "header");
  const auto key_len = r.u64("key section length");
  const std::size_t key_at = r.offset();
  const auto key_section = r.take(key_len, "key section");
  const std::size_t blob_base = r.offset();
  const auto blob = bytes.subspan(blob_base);

  KeyRegistry keys = parse_key_section(key_section, key_at);
  ModelGraph model;
  try {
    std::vector<LayerDescriptor> layers;
    for (const auto& l : header.at("layers")) layers.push_back(layer_from_json(l));
    model = ModelGraph(header.at("name").get<std::string>(), header.at("input_shape").get<Shape>(), std::move(layers));
    model.set_epoch(header.at("epoch").get<int>());
    std::uint64_t expected_end = 0;
    std::size_t seen = 0;
    for (const auto& p : header.at("parameters")) {
      const auto idx = p.at("layer").get<std::size_t>();
      const auto which = p.at("tensor").get<std::string>();
      const auto shape = p.at("shape").get<Shape>();
      const auto off = p.at("offset").get<std::uint64_t>();
      const auto count = p.at("count").get<std::uint64_t>();
      if (idx >= model.num_layers() || !has_parameters(model.layer(idx).desc.kind) ||
          (which != "weight" && which != "bias")) {
        throw FormatError("parameter entry names no parameter tensor: " + p.dump(), header_at);
      }
      Tensor& t = which == "weight" ? model.layer(idx).weight : model.layer(idx).bias;
      if (shape != t.shape() || count != t.size()) {
        throw FormatError("parameter " + which + " of layer " + std::to_string(idx) + " declares shape " +
                              shape_to_string(shape) + " with " + std::to_string(count) + " values, layer needs " +
                              shape_to_string(t.shape()),
                          header_at);
      }
      const auto* src = blob_range(blob, off, count, blob_base, which + " of layer " + std::to_string(idx));
      for (std::size_t i = 0; i < count; ++i) t[i] = std::bit_cast<double>(read_le(src + 8 * i));
      expected_end = std::max<std::uint64_t>(expected_end, off + 8 * count);
      ++seen;
    }
    std::size_t needed = 0;
    for (const auto& l : model.layers()) needed += has_parameters(l.desc.kind) ? 2 : 0;
    if (seen != needed) {
      throw FormatError("checkpoint lists " + std::to_string(seen) + " parameter tensors, model needs " +
                            std::to_string(needed),
                        header_at);
    }
    if (expected_end != blob.size()) {
      throw FormatError("parameter blob has " + std::to_string(blob.size()) + " bytes, manifest describes " +
                            std::to_string(expected_end),
                        blob_base);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what(), header_at);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent checkpoint header: ") + e.what(), header_at);
  }
  model.keys() = std::move(keys);
  try {
    model.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint keys do not match its layers: ") + e.what(), key_at);
  }
  return model;
}

Bytes extract_key_section(std::span<const std::uint8_t> checkpoint) {
  Reader r(checkpoint, 0);
  split_header(r);
  const auto header_len = r.u64("header length");
  r.take(header_len, "header");
  const auto key_len = r.u64("key section length");
  const auto s = r.take(key_len, "key section");
  return Bytes(s.begin(), s.end());
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(model));
}

ModelGraph load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

Bytes read_key_section(const std::filesystem::path& path) { return extract_key_section(read_file(path)); }

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw StateError("SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

std::string key_digest(const KeyRegistry& keys) { return sha256_hex(serialize_key_section(keys)); }

}  // namespace dnnshield
