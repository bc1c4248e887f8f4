#pragma once

#include <cstdint>
#include <string>

#include "pgt/model.hpp"
#include "pgt/train.hpp"

namespace pgt {

/// Checkpoint layout (little-endian):
///   "PGTC" | u32 version | u32 dtype (0 f32, 1 f64) | u64 model digest |
///   u64 epochs completed | u64 optimizer steps | u32 blob count |
///   blobs: name, u32 rank, u64 dims..., raw elements.
/// Parameters come first in declaration order, followed by optional
/// "momentum/<name>" optimizer blobs.
struct CheckpointHeader {
  std::uint32_t version = 1;
  DType dtype = DType::f32;
  std::uint64_t digest = 0;
  std::uint64_t epochs_completed = 0;
  std::uint64_t optimizer_steps = 0;
  std::uint32_t blobs = 0;
};

CheckpointHeader read_checkpoint_header(const std::string& path);

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const SgdOptimizer<T>* optimizer,
                     std::uint64_t epochs_completed);

/// Restores parameters (and optimizer state when given and present).
/// Throws FormatError on a dtype, digest or blob mismatch.
template <typename T>
CheckpointHeader load_checkpoint(const std::string& path, Model<T>& model, SgdOptimizer<T>* optimizer);

}  // namespace pgt
