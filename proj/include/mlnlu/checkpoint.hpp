#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "json.hpp"
#include "mlnlu/tensor.hpp"

namespace mlnlu {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Single-file model container. On disk:
///   magic "MLNLUCKP" | u32 format version | u64 manifest length |
///   manifest JSON | per-array float32 data in manifest order |
///   u64 fnv1a64 checksum of everything before it.
/// All integers and floats little-endian. The manifest JSON is dumped with
/// sorted keys and the arrays are stored sorted by name, so save -> load ->
/// save reproduces the file byte for byte.
struct Checkpoint {
  /// Model-level metadata: kind ("dnn" | "maxent"), architecture config,
  /// vocabularies, training provenance. The container adds format_version
  /// and the array table itself at save time.
  nlohmann::json meta;
  /// Named parameter tensors; values round to float32 in the file.
  std::map<std::string, Tensord> arrays;
};

void save_checkpoint(const Checkpoint& cp, const std::string& path);

/// Errors: FormatVersionError for a foreign or future container version;
/// CorruptionError for bad magic, truncation, checksum mismatch, or a
/// manifest whose array table disagrees with the data section.
Checkpoint load_checkpoint(const std::string& path);

/// 16-hex-char content digest of one tensor (bytes + shape).
std::string tensor_hex_digest(const Tensord& t);

}  // namespace mlnlu
