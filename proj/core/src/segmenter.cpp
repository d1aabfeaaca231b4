#include "mpls/segmenter.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mpls/tensor_bridge.hpp"

namespace mpls {

void SegModelConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("segmenter: depth must be >= 1");
  if (in_channels < 1) throw std::invalid_argument("segmenter: in_channels must be >= 1");
  if (n_classes < 2) throw std::invalid_argument("segmenter: need at least two classes");
  if (blocks_per_level < 1) throw std::invalid_argument("segmenter: blocks_per_level must be >= 1");
  block.validate(depth);
}

void check_divisible(const torch::Tensor& x, std::int64_t divisor, const char* who) {
  if (x.dim() != 5) throw std::invalid_argument(std::string(who) + ": expected [B, C, D, H, W]");
  for (int a = 2; a < 5; ++a) {
    if (x.size(a) % divisor != 0) {
      throw std::invalid_argument(std::string(who) + ": spatial size " + std::to_string(x.size(a)) +
                                  " is not a multiple of " + std::to_string(divisor));
    }
  }
}

EncoderImpl::EncoderImpl(std::int64_t in_channels, int depth, int blocks_per_level,
                         const BlockConfig& cfg) {
  stem_ = register_module("stem", Stem(in_channels, cfg));
  for (int level = 1; level <= depth; ++level) {
    const auto c = cfg.channels_at_level(level);
    levels_.push_back(register_module("level" + std::to_string(level),
                                      convnext_stack(c, blocks_per_level, cfg)));
    downs_.push_back(register_module("down" + std::to_string(level), DownConvNext3d(c, cfg)));
  }
}

EncoderFeatures EncoderImpl::forward(const torch::Tensor& x) {
  EncoderFeatures f;
  auto h = stem_->forward(x);
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    h = levels_[i]->forward(h);
    f.skips.push_back(h);
    h = downs_[i]->forward(h);
  }
  f.bottom = h;
  return f;
}

DecoderImpl::DecoderImpl(const SegModelConfig& cfg)
    : depth_(cfg.depth), deep_supervision_(cfg.deep_supervision) {
  const auto& b = cfg.block;
  for (int level = 1; level <= depth_; ++level) {
    const auto c = b.channels_at_level(level);
    const auto tag = std::to_string(level);
    ups_.push_back(register_module("up" + tag, UpConv3d(2 * c, b)));
    ffas_.push_back(register_module("ffa" + tag, CfFfa(c, c, cfg.ffa)));
    merges_.push_back(register_module("merge" + tag, torch::nn::Conv3d(pointwise(2 * c, c))));
    blocks_.push_back(register_module("level" + tag, convnext_stack(c, cfg.blocks_per_level, b)));
    if (level == 1 || deep_supervision_) {
      heads_.push_back(register_module("head" + tag, OutputHead(c, cfg.n_classes)));
    }
  }
}

SegOutput DecoderImpl::forward(const torch::Tensor& bottom, const std::vector<torch::Tensor>& skips) {
  if (static_cast<int>(skips.size()) != depth_) {
    throw std::invalid_argument("decoder: expected one skip tensor per level");
  }
  SegOutput out;
  std::vector<torch::Tensor> aux;
  auto h = bottom;
  for (int level = depth_; level >= 1; --level) {
    const auto i = static_cast<std::size_t>(level - 1);
    auto up = ups_[i]->forward(h);
    auto gated = ffas_[i]->forward(skips[i], up);
    h = blocks_[i]->forward(merges_[i]->forward(torch::cat({up, gated}, 1)));
    if (level == 1) {
      out.main = heads_[0]->forward(h);
    } else if (deep_supervision_) {
      aux.push_back(heads_[i]->forward(h));
    }
  }
  // Collected deepest first; report from 1/2 resolution downwards.
  out.aux.assign(aux.rbegin(), aux.rend());
  return out;
}

SegmenterImpl::SegmenterImpl(const SegModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = register_module("encoder", Encoder(cfg.in_channels, cfg.depth, cfg.blocks_per_level, cfg.block));
  bridge_ = register_module("bridge", convnext_stack(cfg.block.channels_at_level(cfg.depth + 1),
                                                     cfg.blocks_per_level, cfg.block));
  decoder_ = register_module("decoder", Decoder(cfg));
}

SegOutput SegmenterImpl::forward(const torch::Tensor& x) {
  check_divisible(x, cfg_.divisor(), "segmenter");
  if (x.size(1) != cfg_.in_channels) {
    throw std::invalid_argument("segmenter: expected " + std::to_string(cfg_.in_channels) +
                                " input channels, got " + std::to_string(x.size(1)));
  }
  auto f = encoder_->forward(x);
  return decoder_->forward(bridge_->forward(f.bottom), f.skips);
}

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t window, double overlap) {
  if (window < 1) throw std::invalid_argument("window must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw std::invalid_argument("overlap must be in [0, 1)");
  if (extent <= window) return {0};
  const auto step = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::floor(static_cast<double>(window) * (1.0 - overlap))));
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + window < extent; s += step) starts.push_back(s);
  starts.push_back(extent - window);
  return starts;
}

Volume sliding_window_infer(const WindowPredictor& predict, std::span<const Volume> channels,
                            const Dims3& window, double overlap, double sigma_scale) {
  if (channels.empty()) throw std::invalid_argument("sliding_window_infer: no channels");
  const auto dims = channels.front().dims();
  Dims3 padded{};
  for (int a = 0; a < 3; ++a) padded[a] = std::max(dims[a], window[a]);

  auto input = stack_channels(channels);
  if (padded != dims) {
    input = torch::constant_pad_nd(
        input, {0, padded[2] - dims[2], 0, padded[1] - dims[1], 0, padded[0] - dims[0]}, 0.0);
  }

  // Separable Gaussian importance map.
  std::array<std::vector<double>, 3> g;
  for (int a = 0; a < 3; ++a) {
    const double sigma = std::max(1e-6, sigma_scale * static_cast<double>(window[a]));
    const double c = (static_cast<double>(window[a]) - 1.0) / 2.0;
    g[a].resize(static_cast<std::size_t>(window[a]));
    for (std::int64_t i = 0; i < window[a]; ++i) {
      const double d = static_cast<double>(i) - c;
      g[a][i] = std::max(std::exp(-d * d / (2.0 * sigma * sigma)), 1e-3);
    }
  }

  std::vector<double> acc(static_cast<std::size_t>(voxel_count(padded)), 0.0);
  std::vector<double> norm(acc.size(), 0.0);
  const auto sz = window_starts(padded[0], window[0], overlap);
  const auto sy = window_starts(padded[1], window[1], overlap);
  const auto sx = window_starts(padded[2], window[2], overlap);
  for (auto z0 : sz)
    for (auto y0 : sy)
      for (auto x0 : sx) {
        auto win = input.slice(1, z0, z0 + window[0]).slice(2, y0, y0 + window[1]).slice(3, x0, x0 + window[2]);
        auto prob = predict(win.contiguous()).to(torch::kCPU, torch::kFloat32).contiguous();
        if (prob.dim() != 3 || prob.size(0) != window[0] || prob.size(1) != window[1] ||
            prob.size(2) != window[2]) {
          throw std::runtime_error("sliding_window_infer: predictor returned a wrong shape");
        }
        const float* p = prob.data_ptr<float>();
        for (std::int64_t z = 0; z < window[0]; ++z)
          for (std::int64_t y = 0; y < window[1]; ++y)
            for (std::int64_t x = 0; x < window[2]; ++x) {
              const double w = g[0][z] * g[1][y] * g[2][x];
              const auto o = ((z0 + z) * padded[1] + (y0 + y)) * padded[2] + (x0 + x);
              acc[o] += w * p[(z * window[1] + y) * window[2] + x];
              norm[o] += w;
            }
      }

  Volume out(dims);
  for (std::int64_t z = 0; z < dims[0]; ++z)
    for (std::int64_t y = 0; y < dims[1]; ++y)
      for (std::int64_t x = 0; x < dims[2]; ++x) {
        const auto o = (z * padded[1] + y) * padded[2] + x;
        out(z, y, x) = static_cast<float>(acc[o] / norm[o]);
      }
  return out;
}

WindowPredictor segmenter_predictor(Segmenter model) {
  return [model](const torch::Tensor& window) mutable {
    torch::NoGradGuard guard;
    model->eval();
    auto out = model->forward(window.unsqueeze(0));
    return torch::sigmoid(out.main[0][1]);
  };
}

}  // namespace mpls
