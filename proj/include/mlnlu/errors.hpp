#pragma once

#include <stdexcept>
#include <string>

namespace mlnlu {

/// Shape or dimension disagreement between operands.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

/// Out-of-range index (class target, vocabulary id, tag id).
struct IndexError : std::out_of_range {
  explicit IndexError(const std::string& what) : std::out_of_range(what) {}
};

/// Invalid configuration value (rates, sizes, flag combinations).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file; message carries the line number where known.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Well-formed input that violates a data contract (BIO rules, lengths).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Checkpoint/architecture incompatibility during transfer or load.
struct TransferError : std::runtime_error {
  explicit TransferError(const std::string& what) : std::runtime_error(what) {}
};

/// Damaged or truncated container file.
struct CorruptionError : std::runtime_error {
  explicit CorruptionError(const std::string& what) : std::runtime_error(what) {}
};

/// Container written by an unsupported format version.
struct FormatVersionError : std::runtime_error {
  explicit FormatVersionError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mlnlu
