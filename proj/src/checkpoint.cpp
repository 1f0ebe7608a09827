#include "mlnlu/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "mlnlu/errors.hpp"

namespace mlnlu {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'L', 'N', 'L', 'U', 'C', 'K', 'P'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i)
    v = (v << 8) | static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)]);
  return v;
}

std::uint64_t get_u64(const std::string& s, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)]);
  return v;
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

float get_f32(const std::string& s, std::size_t off) {
  const std::uint32_t bits = get_u32(s, off);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

void save_checkpoint(const Checkpoint& cp, const std::string& path) {
  json array_table = json::array();
  for (const auto& [name, t] : cp.arrays) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    array_table.push_back(entry);
  }
  const json manifest{{"format_version", kCheckpointFormatVersion},
                      {"meta", cp.meta},
                      {"arrays", array_table}};
  const std::string manifest_text = manifest.dump();

  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointFormatVersion);
  put_u64(out, manifest_text.size());
  out += manifest_text;
  for (const auto& [name, t] : cp.arrays)
    for (Index i = 0; i < t.size(); ++i)
      put_f32(out, static_cast<float>(t[i]));
  put_u64(out, fnv1a64(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CorruptionError("checkpoint: cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CorruptionError("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CorruptionError("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());

  constexpr std::size_t header = sizeof kMagic + 4 + 8;
  if (buf.size() < header + 8)
    throw CorruptionError("checkpoint: file truncated (" +
                          std::to_string(buf.size()) + " bytes)");
  if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw CorruptionError("checkpoint: not a checkpoint container: " + path);
  const std::uint32_t version = get_u32(buf, sizeof kMagic);
  if (version != kCheckpointFormatVersion)
    throw FormatVersionError(
        "checkpoint: format version " + std::to_string(version) +
        "; this build reads version " +
        std::to_string(kCheckpointFormatVersion));

  const std::uint64_t checksum = get_u64(buf, buf.size() - 8);
  if (checksum != fnv1a64(buf.data(), buf.size() - 8))
    throw CorruptionError("checkpoint: checksum mismatch - file damaged");

  const std::uint64_t manifest_len = get_u64(buf, sizeof kMagic + 4);
  if (header + manifest_len + 8 > buf.size())
    throw CorruptionError("checkpoint: truncated manifest");
  json manifest;
  try {
    manifest = json::parse(buf.substr(header, manifest_len));
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint: bad manifest: ") + e.what());
  }

  Checkpoint cp;
  try {
    if (manifest.at("format_version").get<std::uint32_t>() != version)
      throw CorruptionError(
          "checkpoint: manifest and header disagree on format version");
    cp.meta = manifest.at("meta");

    std::size_t off = header + manifest_len;
    const std::size_t data_end = buf.size() - 8;
    std::string prev_name;
    for (const json& entry : manifest.at("arrays")) {
      const std::string name = entry.at("name").get<std::string>();
      if (!prev_name.empty() && !(prev_name < name))
        throw CorruptionError("checkpoint: array table not sorted at '" +
                              name + "'");
      prev_name = name;
      const Shape shape = entry.at("shape").get<Shape>();
      Tensord t;
      try {
        t = Tensord::zeros(shape);
      } catch (const DimensionError& e) {
        throw CorruptionError("checkpoint: array '" + name +
                              "' has invalid shape: " + e.what());
      }
      const std::size_t bytes = static_cast<std::size_t>(t.size()) * 4;
      if (off + bytes > data_end)
        throw CorruptionError("checkpoint: array '" + name +
                              "' data truncated");
      for (Index i = 0; i < t.size(); ++i)
        t[i] = static_cast<double>(get_f32(buf, off + static_cast<std::size_t>(i) * 4));
      off += bytes;
      cp.arrays.emplace(name, std::move(t));
    }
    if (off != data_end)
      throw CorruptionError("checkpoint: trailing bytes after array data");
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  return cp;
}

std::string tensor_hex_digest(const Tensord& t) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(t.digest()));
  return buf;
}

}  // namespace mlnlu
