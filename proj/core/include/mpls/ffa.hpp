#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace mpls {

enum class CombineMode { Mean, Sum };

/// Coarse+fine skip attention settings.
struct FFAConfig {
  /// Width of the compact mixed representation; 0 selects max(c / 2, 8).
  std::int64_t reduced_width = 0;
  std::int64_t groupnorm_groups = 4;
  CombineMode combine = CombineMode::Mean;
  /// Kernel of the convolution producing the fine gate.
  std::int64_t fine_kernel = 3;

  std::int64_t width_for(std::int64_t channels) const;
};

/// Projects encoder (x_f) and decoder (x_g) features to the reduced width with
/// 1x1x1 conv + GroupNorm each and adds them.
class FeatureMixerImpl : public torch::nn::Module {
 public:
  FeatureMixerImpl(std::int64_t c_f, std::int64_t c_g, std::int64_t width, std::int64_t groups);
  torch::Tensor forward(const torch::Tensor& x_f, const torch::Tensor& x_g);

 private:
  torch::nn::Conv3d proj_f_{nullptr}, proj_g_{nullptr};
  torch::nn::GroupNorm norm_f_{nullptr}, norm_g_{nullptr};
};
TORCH_MODULE(FeatureMixer);

/// Axial projected coarse attention. The mixture is average-pooled onto each
/// spatial axis; the three profiles are broadcast back, concatenated and
/// turned into a single-channel sigmoid gate that scales x_f.
class ApcaImpl : public torch::nn::Module {
 public:
  ApcaImpl(std::int64_t c_f, std::int64_t c_g, const FFAConfig& cfg);
  /// Gate of shape [B, 1, D, H, W] with values in (0, 1).
  torch::Tensor gate(const torch::Tensor& x_f, const torch::Tensor& x_g);
  torch::Tensor forward(const torch::Tensor& x_f, const torch::Tensor& x_g);
  /// Last convolution of the gate branch (exposed for tests and analysis).
  torch::nn::Conv3d& gate_conv() { return out_; }

 private:
  FeatureMixer mixer_{nullptr};
  torch::nn::Conv3d fuse_{nullptr};
  torch::nn::GroupNorm fuse_norm_{nullptr};
  torch::nn::Conv3d out_{nullptr};
};
TORCH_MODULE(Apca);

/// Gated fine attention: per-voxel gate from the mixture, no axial pooling.
class GfaImpl : public torch::nn::Module {
 public:
  GfaImpl(std::int64_t c_f, std::int64_t c_g, const FFAConfig& cfg);
  torch::Tensor gate(const torch::Tensor& x_f, const torch::Tensor& x_g);
  torch::Tensor forward(const torch::Tensor& x_f, const torch::Tensor& x_g);
  torch::nn::Conv3d& gate_conv() { return out_; }

 private:
  FeatureMixer mixer_{nullptr};
  torch::nn::Conv3d out_{nullptr};
};
TORCH_MODULE(Gfa);

/// Runs APCA and GFA in parallel on the same inputs and merges the two gated
/// encoder maps (mean or sum). x_g is trilinearly resized to x_f's grid when
/// the two differ. Output has exactly x_f's shape.
class CfFfaImpl : public torch::nn::Module {
 public:
  CfFfaImpl(std::int64_t c_f, std::int64_t c_g, const FFAConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x_f, torch::Tensor x_g);
  Apca& apca() { return apca_; }
  Gfa& gfa() { return gfa_; }

 private:
  CombineMode combine_;
  Apca apca_{nullptr};
  Gfa gfa_{nullptr};
};
TORCH_MODULE(CfFfa);

}  // namespace mpls
