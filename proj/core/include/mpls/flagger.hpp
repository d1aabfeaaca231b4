#pragma once

#include <array>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "mpls/blocks.hpp"
#include "mpls/volume.hpp"

namespace mpls {

/// Multiscale region flagger: stem plus five ConvNeXt levels, the first four
/// ending in a downsampling block. Flag maps are read from levels 3, 4 and 5,
/// i.e. at 4, 8 and 16 mm for 1 mm input.
struct FlaggerConfig {
  std::int64_t in_channels = 3;
  BlockConfig block;
  int levels = 5;
  int blocks_per_level = 2;
  std::array<int, 3> scales_mm{4, 8, 16};

  std::int64_t divisor() const { return std::int64_t{1} << (levels - 1); }
  void validate() const;
};

/// Two-channel flag logits at one scale (no batch dimension).
struct ScaleMap {
  torch::Tensor logits;  // [2, D/s, H/s, W/s]
  int scale_mm = 0;
};

/// Voxel weights for the stage-2 input, in [w_min, 1].
struct Heatmap {
  Volume weights;
  float w_min = 0.5f;
};

class FlaggerImpl : public torch::nn::Module {
 public:
  explicit FlaggerImpl(const FlaggerConfig& cfg);
  /// x: [B, in_channels, D, H, W]; returns logits per configured scale.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);
  const FlaggerConfig& config() const { return cfg_; }

 private:
  FlaggerConfig cfg_;
  Stem stem_{nullptr};
  std::vector<torch::nn::Sequential> levels_;
  std::vector<DownConvNext3d> downs_;
  std::vector<OutputHead> heads_;
  std::vector<int> head_levels_;
};
TORCH_MODULE(Flagger);

/// Runs the flagger on one patch [C, D, H, W] in evaluation mode.
std::vector<ScaleMap> flagger_forward(Flagger& model, const torch::Tensor& patch);

/// Cell (i, j, k) at scale s is 1 iff its s^3 voxel block holds a lesion voxel.
/// Output grid is ceil(dims / s).
Mask flag_targets(const Mask& mask, int scale);

/// Averages per-scale lesion probabilities, nearest-upsampled to `out_dims`,
/// and maps p to w_min + (1 - w_min) * p.
Heatmap compose_heatmap(std::span<const ScaleMap> maps, const Dims3& out_dims, float w_min = 0.5f);

/// Multiplies every image channel by the heatmap; the mask is untouched.
PatchSample apply_heatmap(const PatchSample& patch, const Heatmap& hm);
MultiPhaseCase apply_heatmap(const MultiPhaseCase& c, const Heatmap& hm);

/// Whole-volume heatmap: the normalised case is zero padded to a multiple of
/// `window` and tiled without overlap.
Heatmap heatmap_for_case(Flagger& model, const MultiPhaseCase& normalized, const Dims3& window,
                         float w_min = 0.5f);

}  // namespace mpls
