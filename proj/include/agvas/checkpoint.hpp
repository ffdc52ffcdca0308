#pragma once

// Binary checkpoint: parameters, optimizer moments, iteration, config hash.
//
// Layout (all integers and floats little-endian):
//   magic "AGVASCK1" (8 bytes), u32 version = 1, u64 iteration, u64 config hash,
//   u64 optimizer step count, u32 parameter count, then per parameter:
//   u32 name length, name bytes, u32 rows, u32 cols, rows*cols f64 values,
//   rows*cols f64 first moments, rows*cols f64 second moments.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "agvas/optim.hpp"

namespace agvas {

struct CheckpointInfo {
  std::uint64_t iteration = 0;
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const std::filesystem::path& path, const AdamW& opt, const CheckpointInfo& info);
/// Restores values (and moments) into `opt.params()`, matched by name; every
/// parameter must be present with the same shape.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, AdamW& opt);

}  // namespace agvas
