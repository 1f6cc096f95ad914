#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tfill/tensor.hpp"

namespace tfill {

/// Layout: "TFCK" | u32 version | u32 config length | config bytes |
/// u32 tensor count | per tensor { u32 name length | name | u32 rank |
/// u32 dims... | little-endian f64 data } | u64 FNV-1a checksum of all
/// preceding bytes.
struct CheckpointError : std::runtime_error {
  enum class Kind { BadMagic, Version, Checksum, Truncated, Format, StageMismatch };
  Kind kind;
  CheckpointError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::string config_text;  // full run-config snapshot (includes stage=...)
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// FNV-1a of the whole file; equal files have equal checksums.
std::uint64_t checkpoint_file_hash(const std::string& path);

}  // namespace tfill
