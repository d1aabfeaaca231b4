#include "mpls/ffa.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "mpls/blocks.hpp"

namespace mpls {
namespace {

void check_aligned(const torch::Tensor& x_f, const torch::Tensor& x_g, const char* who) {
  if (x_f.dim() != 5 || x_g.dim() != 5) {
    throw std::invalid_argument(std::string(who) + ": expected 5D tensors");
  }
  if (x_f.size(0) != x_g.size(0) || x_f.size(2) != x_g.size(2) || x_f.size(3) != x_g.size(3) ||
      x_f.size(4) != x_g.size(4)) {
    throw std::invalid_argument(std::string(who) + ": x_f and x_g are not spatially aligned");
  }
}

}  // namespace

std::int64_t FFAConfig::width_for(std::int64_t channels) const {
  if (reduced_width > 0) return reduced_width;
  return std::max<std::int64_t>(channels / 2, 8);
}

FeatureMixerImpl::FeatureMixerImpl(std::int64_t c_f, std::int64_t c_g, std::int64_t width,
                                   std::int64_t groups) {
  if (width < 1) throw std::invalid_argument("ffa: reduced width must be >= 1");
  if (width % groups != 0) {
    throw std::invalid_argument("ffa: reduced width " + std::to_string(width) +
                                " not divisible by " + std::to_string(groups) + " groups");
  }
  proj_f_ = register_module("proj_f", torch::nn::Conv3d(pointwise(c_f, width)));
  proj_g_ = register_module("proj_g", torch::nn::Conv3d(pointwise(c_g, width)));
  norm_f_ = register_module("norm_f", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, width)));
  norm_g_ = register_module("norm_g", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, width)));
}

torch::Tensor FeatureMixerImpl::forward(const torch::Tensor& x_f, const torch::Tensor& x_g) {
  return norm_f_->forward(proj_f_->forward(x_f)) + norm_g_->forward(proj_g_->forward(x_g));
}

ApcaImpl::ApcaImpl(std::int64_t c_f, std::int64_t c_g, const FFAConfig& cfg) {
  const auto width = cfg.width_for(c_f);
  mixer_ = register_module("mixer", FeatureMixer(c_f, c_g, width, cfg.groupnorm_groups));
  fuse_ = register_module("fuse", torch::nn::Conv3d(pointwise(3 * width, width)));
  fuse_norm_ = register_module(
      "fuse_norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(cfg.groupnorm_groups, width)));
  out_ = register_module("out", torch::nn::Conv3d(pointwise(width, 1)));
}

torch::Tensor ApcaImpl::gate(const torch::Tensor& x_f, const torch::Tensor& x_g) {
  check_aligned(x_f, x_g, "apca");
  const auto mix = mixer_->forward(x_f, x_g);
  const auto shape = mix.sizes();
  // Adaptive average pooling onto the depth, height and width axes.
  auto along_d = mix.mean({3, 4}, /*keepdim=*/true).expand(shape);
  auto along_h = mix.mean({2, 4}, true).expand(shape);
  auto along_w = mix.mean({2, 3}, true).expand(shape);
  auto h = torch::cat({along_d, along_h, along_w}, 1);
  h = torch::relu(fuse_norm_->forward(fuse_->forward(h)));
  return torch::sigmoid(out_->forward(h));
}

torch::Tensor ApcaImpl::forward(const torch::Tensor& x_f, const torch::Tensor& x_g) {
  return x_f * gate(x_f, x_g);
}

GfaImpl::GfaImpl(std::int64_t c_f, std::int64_t c_g, const FFAConfig& cfg) {
  if (cfg.fine_kernel < 1 || cfg.fine_kernel % 2 == 0) {
    throw std::invalid_argument("gfa: fine kernel must be odd");
  }
  const auto width = cfg.width_for(c_f);
  mixer_ = register_module("mixer", FeatureMixer(c_f, c_g, width, cfg.groupnorm_groups));
  out_ = register_module(
      "out", torch::nn::Conv3d(torch::nn::Conv3dOptions(width, 1, cfg.fine_kernel).padding(cfg.fine_kernel / 2)));
}

torch::Tensor GfaImpl::gate(const torch::Tensor& x_f, const torch::Tensor& x_g) {
  check_aligned(x_f, x_g, "gfa");
  return torch::sigmoid(out_->forward(torch::relu(mixer_->forward(x_f, x_g))));
}

torch::Tensor GfaImpl::forward(const torch::Tensor& x_f, const torch::Tensor& x_g) {
  return x_f * gate(x_f, x_g);
}

CfFfaImpl::CfFfaImpl(std::int64_t c_f, std::int64_t c_g, const FFAConfig& cfg) : combine_(cfg.combine) {
  apca_ = register_module("apca", Apca(c_f, c_g, cfg));
  gfa_ = register_module("gfa", Gfa(c_f, c_g, cfg));
}

torch::Tensor CfFfaImpl::forward(const torch::Tensor& x_f, torch::Tensor x_g) {
  if (x_g.dim() == 5 && (x_g.size(2) != x_f.size(2) || x_g.size(3) != x_f.size(3) ||
                         x_g.size(4) != x_f.size(4))) {
    namespace F = torch::nn::functional;
    x_g = F::interpolate(x_g, F::InterpolateFuncOptions()
                                  .size(std::vector<std::int64_t>{x_f.size(2), x_f.size(3), x_f.size(4)})
                                  .mode(torch::kTrilinear)
                                  .align_corners(false));
  }
  auto coarse = apca_->forward(x_f, x_g);
  auto fine = gfa_->forward(x_f, x_g);
  return combine_ == CombineMode::Mean ? 0.5 * (coarse + fine) : coarse + fine;
}

}  // namespace mpls
