#pragma once

#include <span>

#include <torch/torch.h>

#include "mpls/volume.hpp"

namespace mpls {

/// Copies a grid into a float32 tensor of shape [D, H, W].
torch::Tensor to_tensor(const Volume& v);
torch::Tensor to_tensor(const Mask& m);

/// Stacks equally sized volumes into a [C, D, H, W] tensor.
torch::Tensor stack_channels(std::span<const Volume> channels);

/// Converts a 3D tensor (any float dtype, any device) back to a volume.
Volume volume_from_tensor(const torch::Tensor& t);
Mask mask_from_tensor(const torch::Tensor& t);

inline std::vector<std::int64_t> shape_of(const Dims3& d) { return {d[0], d[1], d[2]}; }

}  // namespace mpls
