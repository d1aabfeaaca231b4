#include "mpls/blocks.hpp"

#include <stdexcept>
#include <string>

namespace mpls {
namespace {

torch::ExpandingArray<3> padding_for(const std::array<std::int64_t, 3>& k) {
  return torch::ExpandingArray<3>({k[0] / 2, k[1] / 2, k[2] / 2});
}

torch::ExpandingArray<3> as_array(const std::array<std::int64_t, 3>& k) {
  return torch::ExpandingArray<3>({k[0], k[1], k[2]});
}

}  // namespace

void BlockConfig::validate(int levels) const {
  if (base_width < 2) throw std::invalid_argument("block config: base width must be >= 2");
  if (expansion < 1) throw std::invalid_argument("block config: expansion must be >= 1");
  if (groupnorm_groups < 1) throw std::invalid_argument("block config: groups must be >= 1");
  for (auto k : kernel) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("block config: kernel sizes must be odd");
  }
  for (int level = 1; level <= levels + 1; ++level) {
    if (channels_at_level(level) % groupnorm_groups != 0) {
      throw std::invalid_argument("block config: " + std::to_string(channels_at_level(level)) +
                                  " channels not divisible by " +
                                  std::to_string(groupnorm_groups) + " groups");
    }
  }
}

torch::nn::Conv3dOptions pointwise(std::int64_t in, std::int64_t out) {
  return torch::nn::Conv3dOptions(in, out, 1);
}

StemImpl::StemImpl(std::int64_t in_channels, const BlockConfig& cfg) : in_channels_(in_channels) {
  proj_ = register_module("proj", torch::nn::Conv3d(pointwise(in_channels, cfg.base_width)));
}

torch::Tensor StemImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5 || x.size(1) != in_channels_) {
    throw std::invalid_argument("stem: expected [B, " + std::to_string(in_channels_) +
                                ", D, H, W] input");
  }
  return proj_->forward(x);
}

ConvNext3dImpl::ConvNext3dImpl(std::int64_t channels, const BlockConfig& cfg) {
  depthwise_ = register_module(
      "depthwise", torch::nn::Conv3d(torch::nn::Conv3dOptions(channels, channels, as_array(cfg.kernel))
                                         .padding(padding_for(cfg.kernel))
                                         .groups(channels)));
  norm_ = register_module("norm",
                          torch::nn::GroupNorm(torch::nn::GroupNormOptions(cfg.groupnorm_groups, channels)));
  expand_ = register_module("expand", torch::nn::Conv3d(pointwise(channels, channels * cfg.expansion)));
  project_ = register_module("project", torch::nn::Conv3d(pointwise(channels * cfg.expansion, channels)));
}

torch::Tensor ConvNext3dImpl::forward(const torch::Tensor& x) {
  auto h = norm_->forward(depthwise_->forward(x));
  h = project_->forward(torch::gelu(expand_->forward(h)));
  return x + h;
}

void ConvNext3dImpl::zero_final_projection() {
  torch::NoGradGuard guard;
  project_->weight.zero_();
  project_->bias.zero_();
}

DownConvNext3dImpl::DownConvNext3dImpl(std::int64_t channels, const BlockConfig& cfg) {
  depthwise_ = register_module(
      "depthwise", torch::nn::Conv3d(torch::nn::Conv3dOptions(channels, channels, as_array(cfg.kernel))
                                         .stride(2)
                                         .padding(padding_for(cfg.kernel))
                                         .groups(channels)));
  norm_ = register_module("norm",
                          torch::nn::GroupNorm(torch::nn::GroupNormOptions(cfg.groupnorm_groups, channels)));
  expand_ = register_module("expand", torch::nn::Conv3d(pointwise(channels, channels * cfg.expansion)));
  project_ =
      register_module("project", torch::nn::Conv3d(pointwise(channels * cfg.expansion, 2 * channels)));
  shortcut_ = register_module("shortcut",
                              torch::nn::Conv3d(pointwise(channels, 2 * channels).stride(2)));
}

torch::Tensor DownConvNext3dImpl::forward(const torch::Tensor& x) {
  for (int a = 2; a < 5; ++a) {
    if (x.size(a) % 2 != 0) {
      throw std::invalid_argument("down block: spatial size " + std::to_string(x.size(a)) +
                                  " is odd");
    }
  }
  auto h = norm_->forward(depthwise_->forward(x));
  h = project_->forward(torch::gelu(expand_->forward(h)));
  return shortcut_->forward(x) + h;
}

UpConv3dImpl::UpConv3dImpl(std::int64_t channels, const BlockConfig& cfg) {
  up_ = register_module("up", torch::nn::ConvTranspose3d(
                                  torch::nn::ConvTranspose3dOptions(channels, channels / 2, 2).stride(2)));
  norm_ = register_module(
      "norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(cfg.groupnorm_groups, channels / 2)));
}

torch::Tensor UpConv3dImpl::forward(const torch::Tensor& x) { return norm_->forward(up_->forward(x)); }

OutputHeadImpl::OutputHeadImpl(std::int64_t channels, std::int64_t n_classes) : in_channels_(channels) {
  proj_ = register_module("proj", torch::nn::Conv3d(pointwise(channels, n_classes)));
}

torch::Tensor OutputHeadImpl::forward(const torch::Tensor& x) { return proj_->forward(x); }

torch::nn::Sequential convnext_stack(std::int64_t channels, int count, const BlockConfig& cfg) {
  torch::nn::Sequential seq;
  for (int i = 0; i < count; ++i) seq->push_back(ConvNext3d(channels, cfg));
  return seq;
}

std::int64_t parameter_count(const torch::nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

}  // namespace mpls
