#include "mpls/fusion.hpp"

#include <stdexcept>
#include <string>

namespace mpls {

FusionInput form_fusion_input(const Volume& image, const Volume& phase_prob,
                              const Volume& threephase_prob) {
  if (image.dims() != phase_prob.dims() || image.dims() != threephase_prob.dims()) {
    throw std::invalid_argument("form_fusion_input: grids are not aligned");
  }
  FusionInput in{image, Volume(image.dims())};
  for (std::int64_t i = 0; i < image.size(); ++i) {
    in.probability[i] = static_cast<float>(
        (static_cast<double>(phase_prob[i]) + static_cast<double>(threephase_prob[i])) * 0.5);
  }
  return in;
}

void FusionConfig::validate() const {
  if (branches < 1) throw std::invalid_argument("fusion: need at least one branch");
  base.validate();
}

FusionNetImpl::FusionNetImpl(const FusionConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& b = cfg.base.block;
  for (int i = 0; i < cfg.branches; ++i) {
    encoders_.push_back(register_module(
        "encoder" + std::to_string(i),
        Encoder(cfg.base.in_channels, cfg.base.depth, cfg.base.blocks_per_level, b)));
  }
  for (int level = 1; level <= cfg.base.depth; ++level) {
    const auto c = b.channels_at_level(level);
    skip_merges_.push_back(register_module("skip_merge" + std::to_string(level),
                                           torch::nn::Conv3d(pointwise(cfg.branches * c, c))));
  }
  const auto bottom = b.channels_at_level(cfg.base.depth + 1);
  bottom_merge_ = register_module("bottom_merge", torch::nn::Conv3d(pointwise(cfg.branches * bottom, bottom)));
  fusion_block_ = register_module("fusion_block", convnext_stack(bottom, cfg.base.blocks_per_level, b));
  decoder_ = register_module("decoder", Decoder(cfg.base));
}

SegOutput FusionNetImpl::forward(const std::vector<torch::Tensor>& branches) {
  if (static_cast<int>(branches.size()) != cfg_.branches) {
    throw std::invalid_argument("fusion: expected " + std::to_string(cfg_.branches) + " branch inputs");
  }
  std::vector<EncoderFeatures> feats;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    check_divisible(branches[i], cfg_.base.divisor(), "fusion");
    if (branches[i].sizes() != branches.front().sizes()) {
      throw std::invalid_argument("fusion: branch inputs differ in shape");
    }
    feats.push_back(encoders_[i]->forward(branches[i]));
  }
  std::vector<torch::Tensor> skips;
  for (std::size_t level = 0; level < skip_merges_.size(); ++level) {
    std::vector<torch::Tensor> parts;
    for (const auto& f : feats) parts.push_back(f.skips[level]);
    skips.push_back(skip_merges_[level]->forward(torch::cat(parts, 1)));
  }
  std::vector<torch::Tensor> bottoms;
  for (const auto& f : feats) bottoms.push_back(f.bottom);
  auto bottom = fusion_block_->forward(bottom_merge_->forward(torch::cat(bottoms, 1)));
  return decoder_->forward(bottom, skips);
}

WindowPredictor fusion_predictor(FusionNet model) {
  return [model](const torch::Tensor& window) mutable {
    torch::NoGradGuard guard;
    model->eval();
    const auto per_branch = model->config().base.in_channels;
    auto batched = window.unsqueeze(0);
    std::vector<torch::Tensor> branches;
    for (int i = 0; i < model->config().branches; ++i) {
      branches.push_back(batched.slice(1, i * per_branch, (i + 1) * per_branch));
    }
    return torch::sigmoid(model->forward(branches).main[0][1]);
  };
}

}  // namespace mpls
