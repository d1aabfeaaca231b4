#pragma once

#include <vector>

#include <torch/torch.h>

#include "mpls/segmenter.hpp"
#include "mpls/volume.hpp"

namespace mpls {

/// Two-channel input of one fusion encoder branch: the phase image and the
/// mean of the single-phase and three-phase stage-2 probabilities.
struct FusionInput {
  Volume image;
  Volume probability;
};

/// Throws std::invalid_argument when the three grids are not aligned.
FusionInput form_fusion_input(const Volume& image, const Volume& phase_prob,
                              const Volume& threephase_prob);

struct FusionConfig {
  /// Decoder and per-branch encoder settings; `base.in_channels` is the
  /// per-branch channel count (2).
  SegModelConfig base = [] {
    SegModelConfig c;
    c.in_channels = 2;
    return c;
  }();
  int branches = 3;

  void validate() const;
};

/// Independent encoder per phase branch. Skip features of each level and the
/// bottom features are concatenated across branches and merged with a 1x1x1
/// convolution; the merged bottom goes through a ConvNeXt fusion block and a
/// single shared decoder produces the logits.
class FusionNetImpl : public torch::nn::Module {
 public:
  explicit FusionNetImpl(const FusionConfig& cfg);
  /// One [B, 2, D, H, W] tensor per branch, in arterial, delay, venous order.
  SegOutput forward(const std::vector<torch::Tensor>& branches);
  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  std::vector<Encoder> encoders_;
  std::vector<torch::nn::Conv3d> skip_merges_;
  torch::nn::Conv3d bottom_merge_{nullptr};
  torch::nn::Sequential fusion_block_{nullptr};
  Decoder decoder_{nullptr};
};
TORCH_MODULE(FusionNet);

/// Window predictor over a [2 * branches, ...] stacked window (branch-major).
WindowPredictor fusion_predictor(FusionNet model);

}  // namespace mpls
