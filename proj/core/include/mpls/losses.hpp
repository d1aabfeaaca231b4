#pragma once

#include <torch/torch.h>

namespace mpls {

struct LossConfig {
  double alpha_b = 1.0;
  double alpha_d = 1.0;
  double w_c = 1.0;  // weight of the positive (lesion) term of the cross-entropy
  double eps = 1.0;  // Dice smoothing
  double threshold = 0.5;

  void validate() const;
};

// All losses take lesion logits and binary targets of shape [B, ...].
// Cross-entropy is averaged over every voxel; Dice is computed per sample
// over dims 1.. and averaged over the batch.

torch::Tensor bce_loss(const torch::Tensor& logits, const torch::Tensor& target, double w_c = 1.0);

/// (2 sum(p*y) + eps) / (sum p + sum y + eps) per sample, averaged. With
/// eps = 0 and both sums zero the sample scores 1.
torch::Tensor dice_coeff(const torch::Tensor& probs, const torch::Tensor& target, double eps = 1.0);

torch::Tensor dice_loss(const torch::Tensor& logits, const torch::Tensor& target, double eps = 1.0);

/// alpha_b * bce + alpha_d * (1 - dice), with an analytic backward pass.
torch::Tensor compound_loss(const torch::Tensor& logits, const torch::Tensor& target,
                            const LossConfig& cfg = {});

}  // namespace mpls
