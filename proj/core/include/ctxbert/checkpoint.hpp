#pragma once

#include <filesystem>
#include <memory>

#include "ctxbert/model.hpp"

namespace ctxbert::training {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers little-endian:
//   "CTXBCKPT" | u32 version | u64 n | n bytes of canonical config JSON |
//   u32 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims,
//   float32 values | u64 FNV-1a of everything before it.
// Values are stored as float32 regardless of the model's precision, so a
// 64-bit model round-trips only to float32 accuracy.
template <typename T>
void save_checkpoint(const model::ContextualBert<T>& net, const std::filesystem::path& path);

model::ModelConfig read_checkpoint_config(const std::filesystem::path& path);

// Rebuilds the model from the stored config and overwrites every parameter.
// Throws FormatError on a bad magic, version, checksum, or missing tensor.
template <typename T>
std::unique_ptr<model::ContextualBert<T>> load_checkpoint(const std::filesystem::path& path);

}  // namespace ctxbert::training
