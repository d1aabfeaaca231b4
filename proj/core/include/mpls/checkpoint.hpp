#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace mpls {

struct CheckpointMeta {
  std::string kind;  // e.g. "stage1", "stage2_venous"
  nlohmann::json config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

// Layout: "MPLSCKPT", u32 version, u64 header length, JSON header, then raw
// little-endian float32 tensor data at the offsets listed in the header.
// Parameters and buffers are stored by module path; AdamW moments and step
// counts are stored per parameter when an optimizer is given.

void save_checkpoint(const std::filesystem::path& path, torch::nn::Module& model, const CheckpointMeta& meta,
                     torch::optim::AdamW* optimizer = nullptr);

/// Restores parameters (and optimizer state when both the file and the
/// caller provide it). Throws ConfigError on a malformed file or a tensor
/// name/shape mismatch.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, torch::nn::Module& model,
                               torch::optim::AdamW* optimizer = nullptr);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace mpls
