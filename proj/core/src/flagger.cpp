#include "mpls/flagger.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mpls/patch.hpp"
#include "mpls/segmenter.hpp"
#include "mpls/tensor_bridge.hpp"

namespace mpls {

void FlaggerConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("flagger: levels must be >= 1");
  block.validate(levels);
  for (int s : scales_mm) {
    if (s < 1 || (s & (s - 1)) != 0) throw std::invalid_argument("flagger: scales must be powers of two");
    const int level = static_cast<int>(std::log2(s)) + 1;
    if (level > levels) {
      throw std::invalid_argument("flagger: scale " + std::to_string(s) + " mm needs more levels");
    }
  }
}

FlaggerImpl::FlaggerImpl(const FlaggerConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  stem_ = register_module("stem", Stem(cfg.in_channels, cfg.block));
  for (int level = 1; level <= cfg.levels; ++level) {
    const auto c = cfg.block.channels_at_level(level);
    levels_.push_back(register_module("level" + std::to_string(level),
                                      convnext_stack(c, cfg.blocks_per_level, cfg.block)));
    if (level < cfg.levels) {
      downs_.push_back(register_module("down" + std::to_string(level), DownConvNext3d(c, cfg.block)));
    }
  }
  for (int s : cfg.scales_mm) {
    const int level = static_cast<int>(std::log2(s)) + 1;
    head_levels_.push_back(level);
    heads_.push_back(register_module("head" + std::to_string(s) + "mm",
                                     OutputHead(cfg.block.channels_at_level(level), 2)));
  }
}

std::vector<torch::Tensor> FlaggerImpl::forward(const torch::Tensor& x) {
  check_divisible(x, cfg_.divisor(), "flagger");
  if (x.size(1) != cfg_.in_channels) {
    throw std::invalid_argument("flagger: expected " + std::to_string(cfg_.in_channels) +
                                " input channels");
  }
  std::vector<torch::Tensor> level_out(static_cast<std::size_t>(cfg_.levels));
  auto h = stem_->forward(x);
  for (int level = 1; level <= cfg_.levels; ++level) {
    h = levels_[level - 1]->forward(h);
    level_out[level - 1] = h;
    if (level < cfg_.levels) h = downs_[level - 1]->forward(h);
  }
  std::vector<torch::Tensor> out;
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    out.push_back(heads_[i]->forward(level_out[head_levels_[i] - 1]));
  }
  return out;
}

std::vector<ScaleMap> flagger_forward(Flagger& model, const torch::Tensor& patch) {
  if (patch.dim() != 4) throw std::invalid_argument("flagger_forward: expected [C, D, H, W]");
  torch::NoGradGuard guard;
  model->eval();
  auto logits = model->forward(patch.unsqueeze(0));
  std::vector<ScaleMap> maps;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    maps.push_back({logits[i][0], model->config().scales_mm[i]});
  }
  return maps;
}

Mask flag_targets(const Mask& mask, int scale) {
  if (scale < 1) throw std::invalid_argument("flag_targets: scale must be >= 1");
  const auto& d = mask.dims();
  Dims3 out_d{};
  for (int a = 0; a < 3; ++a) out_d[a] = (d[a] + scale - 1) / scale;
  Mask out(out_d);
  for (std::int64_t z = 0; z < d[0]; ++z)
    for (std::int64_t y = 0; y < d[1]; ++y)
      for (std::int64_t x = 0; x < d[2]; ++x) {
        if (mask(z, y, x)) out(z / scale, y / scale, x / scale) = 1;
      }
  return out;
}

Heatmap compose_heatmap(std::span<const ScaleMap> maps, const Dims3& out_dims, float w_min) {
  if (maps.empty()) throw std::invalid_argument("compose_heatmap: no scale maps");
  if (!(w_min >= 0.0f && w_min <= 1.0f)) throw std::invalid_argument("compose_heatmap: w_min in [0, 1]");
  std::vector<torch::Tensor> probs;
  for (const auto& m : maps) {
    if (m.logits.dim() != 4 || m.logits.size(0) != 2) {
      throw std::invalid_argument("compose_heatmap: scale map must be [2, d, h, w]");
    }
    probs.push_back(torch::sigmoid(m.logits[1].detach().to(torch::kCPU, torch::kDouble)).contiguous());
  }
  Heatmap hm{Volume(out_dims), w_min};
  const double n = static_cast<double>(maps.size());
  for (std::int64_t z = 0; z < out_dims[0]; ++z)
    for (std::int64_t y = 0; y < out_dims[1]; ++y)
      for (std::int64_t x = 0; x < out_dims[2]; ++x) {
        double sum = 0.0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
          const auto s = maps[i].scale_mm;
          const auto& p = probs[i];
          const auto cz = std::min(z / s, p.size(0) - 1);
          const auto cy = std::min(y / s, p.size(1) - 1);
          const auto cx = std::min(x / s, p.size(2) - 1);
          sum += p.data_ptr<double>()[(cz * p.size(1) + cy) * p.size(2) + cx];
        }
        hm.weights(z, y, x) = static_cast<float>(w_min + (1.0 - w_min) * (sum / n));
      }
  return hm;
}

PatchSample apply_heatmap(const PatchSample& patch, const Heatmap& hm) {
  PatchSample out = patch;
  for (auto& ch : out.channels) {
    if (ch.dims() != hm.weights.dims()) throw std::invalid_argument("apply_heatmap: shape mismatch");
    for (std::int64_t i = 0; i < ch.size(); ++i) ch[i] *= hm.weights[i];
  }
  return out;
}

MultiPhaseCase apply_heatmap(const MultiPhaseCase& c, const Heatmap& hm) {
  MultiPhaseCase out = c;
  for (auto& pv : out.phases) {
    if (pv.voxels.dims() != hm.weights.dims()) throw std::invalid_argument("apply_heatmap: shape mismatch");
    for (std::int64_t i = 0; i < pv.voxels.size(); ++i) pv.voxels[i] *= hm.weights[i];
  }
  return out;
}

Heatmap heatmap_for_case(Flagger& model, const MultiPhaseCase& normalized, const Dims3& window,
                         float w_min) {
  const auto dims = normalized.dims();
  Dims3 padded{};
  for (int a = 0; a < 3; ++a) padded[a] = (dims[a] + window[a] - 1) / window[a] * window[a];
  Heatmap full{Volume(padded), w_min};
  std::vector<Phase> phases(kPhaseOrder.begin(), kPhaseOrder.begin() + model->config().in_channels);
  for (std::int64_t z = 0; z < padded[0]; z += window[0])
    for (std::int64_t y = 0; y < padded[1]; y += window[1])
      for (std::int64_t x = 0; x < padded[2]; x += window[2]) {
        auto patch = extract_patch(normalized, {z, y, x}, window, phases);
        auto maps = flagger_forward(model, stack_channels(patch.channels));
        auto tile = compose_heatmap(maps, window, w_min);
        paste(full.weights, tile.weights, {z, y, x});
      }
  return {crop(full.weights, {0, 0, 0}, dims), w_min};
}

}  // namespace mpls
