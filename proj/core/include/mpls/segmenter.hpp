#pragma once

#include <functional>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "mpls/blocks.hpp"
#include "mpls/ffa.hpp"
#include "mpls/volume.hpp"

namespace mpls {

struct SegModelConfig {
  std::int64_t in_channels = 3;
  int depth = 4;
  BlockConfig block;
  FFAConfig ffa;
  bool deep_supervision = true;
  std::int64_t n_classes = 2;
  int blocks_per_level = 2;

  /// Spatial sizes must be multiples of 2^depth.
  std::int64_t divisor() const { return std::int64_t{1} << depth; }
  void validate() const;
};

/// Logits of the full-resolution head plus the deep-supervision heads, ordered
/// from 1/2 resolution down to 1/2^(depth-1).
struct SegOutput {
  torch::Tensor main;
  std::vector<torch::Tensor> aux;
};

struct EncoderFeatures {
  std::vector<torch::Tensor> skips;  // level 1..depth, before downsampling
  torch::Tensor bottom;              // after the last downsampling block
};

/// Stem followed by `depth` levels of ConvNeXt blocks and a downsampling block.
class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(std::int64_t in_channels, int depth, int blocks_per_level, const BlockConfig& cfg);
  EncoderFeatures forward(const torch::Tensor& x);

 private:
  Stem stem_{nullptr};
  std::vector<torch::nn::Sequential> levels_;
  std::vector<DownConvNext3d> downs_;
};
TORCH_MODULE(Encoder);

/// Upsampling path: per level an up-convolution, C+F FFA on the skip,
/// concatenation, a 1x1x1 merge and ConvNeXt blocks; an output head per level.
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(const SegModelConfig& cfg);
  SegOutput forward(const torch::Tensor& bottom, const std::vector<torch::Tensor>& skips);
  /// Head of 1-based level N (N = 1 is full resolution).
  OutputHead& head(int level) { return heads_.at(static_cast<std::size_t>(level - 1)); }
  int head_count() const { return static_cast<int>(heads_.size()); }

 private:
  int depth_;
  bool deep_supervision_;
  std::vector<UpConv3d> ups_;
  std::vector<CfFfa> ffas_;
  std::vector<torch::nn::Conv3d> merges_;
  std::vector<torch::nn::Sequential> blocks_;
  std::vector<OutputHead> heads_;
};
TORCH_MODULE(Decoder);

/// Encoder, ConvNeXt bridge, decoder. Used for the stage-2 models and, with
/// depth 3, for the per-lesion refiner.
class SegmenterImpl : public torch::nn::Module {
 public:
  explicit SegmenterImpl(const SegModelConfig& cfg);
  /// x: [B, in_channels, D, H, W] with D, H, W multiples of 2^depth.
  SegOutput forward(const torch::Tensor& x);
  const SegModelConfig& config() const { return cfg_; }
  Decoder& decoder() { return decoder_; }

 private:
  SegModelConfig cfg_;
  Encoder encoder_{nullptr};
  torch::nn::Sequential bridge_{nullptr};
  Decoder decoder_{nullptr};
};
TORCH_MODULE(Segmenter);

void check_divisible(const torch::Tensor& x, std::int64_t divisor, const char* who);

/// Maps one window [C, w0, w1, w2] to lesion probabilities [w0, w1, w2].
using WindowPredictor = std::function<torch::Tensor(const torch::Tensor&)>;

/// Tiles the volume with windows overlapping by `overlap` (fraction of the
/// window) and blends window predictions with Gaussian importance weights
/// (sigma = sigma_scale * window). Volumes smaller than a window are zero
/// padded. Output lives on the input grid.
Volume sliding_window_infer(const WindowPredictor& predict, std::span<const Volume> channels,
                            const Dims3& window, double overlap, double sigma_scale = 0.125);

/// Window start positions along one axis.
std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t window, double overlap);

/// Predictor wrapping a segmenter in evaluation mode: sigmoid of the lesion
/// channel of the main head.
WindowPredictor segmenter_predictor(Segmenter model);

}  // namespace mpls
