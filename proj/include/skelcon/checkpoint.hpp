#pragma once

// CKPT1 container: one JSON manifest line, then a flat little-endian float32
// blob. The manifest's "arrays" list maps each name to its shape and byte
// offset inside the blob.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skelcon/error.hpp"

namespace skelcon {

inline constexpr const char* kCheckpointFormat = "CKPT1";

struct ArrayRecord {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

struct Container {
  nlohmann::json manifest;
  std::vector<ArrayRecord> arrays;

  const ArrayRecord& get(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw SchemaError("checkpoint has no array named '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }
};

template <class T>
ArrayRecord make_array(std::string name, std::vector<std::size_t> shape, std::span<const T> values) {
  ArrayRecord r{std::move(name), std::move(shape), {}};
  r.values.reserve(values.size());
  for (T v : values) r.values.push_back(static_cast<float>(v));
  return r;
}

namespace detail {

inline void put_le32(std::string& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline float get_le32(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace detail

/// `manifest` carries caller fields (kind, config, step, ...); format and
/// the array index are added here.
inline void write_container(const std::string& path, nlohmann::json manifest, const std::vector<ArrayRecord>& arrays) {
  std::string blob;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& a : arrays) {
    std::size_t expected = 1;
    for (auto d : a.shape) expected *= d;
    if (expected != a.values.size()) throw ContractError("array '" + a.name + "' size does not match its shape");
    index.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", blob.size()}, {"count", a.values.size()}});
    for (float v : a.values) detail::put_le32(blob, v);
  }
  manifest["format"] = kCheckpointFormat;
  manifest["arrays"] = std::move(index);
  manifest["blob_bytes"] = blob.size();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint '" + path + "' for writing");
  os << manifest.dump() << '\n';
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

inline Container read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw ParseError(path + ": missing checkpoint manifest");
  Container c;
  try {
    c.manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad checkpoint manifest: " + e.what());
  }
  if (c.manifest.value("format", "") != kCheckpointFormat) throw ParseError(path + ": not a CKPT1 checkpoint");
  const auto bytes = c.manifest.at("blob_bytes").get<std::size_t>();
  std::vector<unsigned char> blob(bytes);
  is.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(is.gcount()) != bytes) throw ParseError(path + ": truncated checkpoint blob");
  for (const auto& entry : c.manifest.at("arrays")) {
    ArrayRecord a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (offset + 4 * count > bytes) throw ParseError(path + ": array '" + a.name + "' exceeds blob");
    a.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) a.values[i] = detail::get_le32(&blob[offset + 4 * i]);
    c.arrays.push_back(std::move(a));
  }
  return c;
}

}  // namespace skelcon
