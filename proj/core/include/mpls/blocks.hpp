#pragma once

#include <array>
#include <cstdint>

#include <torch/torch.h>

namespace mpls {

/// Width/shape rules shared by every encoder-decoder in the framework.
struct BlockConfig {
  std::int64_t base_width = 32;                // channels after the stem (C)
  std::array<std::int64_t, 3> kernel{3, 3, 3};  // depthwise kernel, odd sizes
  std::int64_t expansion = 2;                  // inverted-bottleneck ratio
  std::int64_t groupnorm_groups = 4;

  /// Channels at 1-based level N: 2^(N-1) * C.
  std::int64_t channels_at_level(int level) const { return base_width << (level - 1); }

  /// Throws std::invalid_argument unless every width up to `levels` (plus the
  /// bridge) divides into the group count.
  void validate(int levels) const;
};

torch::nn::Conv3dOptions pointwise(std::int64_t in, std::int64_t out);

/// 1x1x1 projection from the input channels to C; spatial size preserved.
class StemImpl : public torch::nn::Module {
 public:
  StemImpl(std::int64_t in_channels, const BlockConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  std::int64_t in_channels() const { return in_channels_; }

 private:
  std::int64_t in_channels_;
  torch::nn::Conv3d proj_{nullptr};
};
TORCH_MODULE(Stem);

/// Residual ConvNeXt block: depthwise k^3 conv -> GroupNorm -> 1x1x1 expand ->
/// GELU -> 1x1x1 project, added to the input.
class ConvNext3dImpl : public torch::nn::Module {
 public:
  ConvNext3dImpl(std::int64_t channels, const BlockConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  /// Zeroes the final projection so the block is the identity.
  void zero_final_projection();

 private:
  torch::nn::Conv3d depthwise_{nullptr};
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Conv3d expand_{nullptr};
  torch::nn::Conv3d project_{nullptr};
};
TORCH_MODULE(ConvNext3d);

/// Strided ConvNeXt block: halves every spatial axis and doubles channels.
/// The residual path is a strided 1x1x1 convolution.
class DownConvNext3dImpl : public torch::nn::Module {
 public:
  DownConvNext3dImpl(std::int64_t channels, const BlockConfig& cfg);
  /// Throws std::invalid_argument on odd spatial sizes.
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv3d depthwise_{nullptr};
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Conv3d expand_{nullptr};
  torch::nn::Conv3d project_{nullptr};
  torch::nn::Conv3d shortcut_{nullptr};
};
TORCH_MODULE(DownConvNext3d);

/// 2x transposed convolution halving channels, followed by GroupNorm.
class UpConv3dImpl : public torch::nn::Module {
 public:
  UpConv3dImpl(std::int64_t channels, const BlockConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::ConvTranspose3d up_{nullptr};
  torch::nn::GroupNorm norm_{nullptr};
};
TORCH_MODULE(UpConv3d);

/// 1x1x1 linear projection to class logits (no activation).
class OutputHeadImpl : public torch::nn::Module {
 public:
  OutputHeadImpl(std::int64_t channels, std::int64_t n_classes = 2);
  torch::Tensor forward(const torch::Tensor& x);
  std::int64_t in_channels() const { return in_channels_; }

 private:
  std::int64_t in_channels_;
  torch::nn::Conv3d proj_{nullptr};
};
TORCH_MODULE(OutputHead);

/// `count` ConvNext3d blocks of equal width.
torch::nn::Sequential convnext_stack(std::int64_t channels, int count, const BlockConfig& cfg);

/// Total number of trainable scalars.
std::int64_t parameter_count(const torch::nn::Module& m);

}  // namespace mpls
