#pragma once

// Binary checkpoint container.
//
// Layout (all integers little-endian):
//   bytes 0-7    magic "SEQTAGCK"
//   u32          format version (kCheckpointVersion)
//   u64          payload length in bytes
//   u64          FNV-1a 64 checksum of the payload
//   payload:
//     u32 entry count, then per entry
//       u32 name length, name bytes, u64 value length, value bytes
//     u32 tensor count, then per tensor
//       u32 name length, name bytes, u64 rows, u64 cols,
//       rows*cols IEEE-754 binary64 values, row-major
//
// Text entries: config, tagset.name, tagset.classes, tagset.display,
// vocab, merges, state. Tensors: model.*, adam.m.*, adam.v.*, best.* (only
// in resumable snapshots), history (epochs x 4) and state.best_dev_f1.

#include <cstdint>
#include <filesystem>
#include <string>

#include "seqtag/trainer.hpp"

namespace seqtag {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& checkpoint);
// Throws Error{VersionMismatch, CorruptCheckpoint}.
Checkpoint deserialize_checkpoint(const std::string& bytes);

// Throws Error{IoError}.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace seqtag
