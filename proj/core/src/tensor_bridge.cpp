#include "mpls/tensor_bridge.hpp"

#include <cstring>
#include <stdexcept>

namespace mpls {

torch::Tensor to_tensor(const Volume& v) {
  auto t = torch::empty(shape_of(v.dims()), torch::kFloat32);
  std::memcpy(t.data_ptr<float>(), v.data(), sizeof(float) * static_cast<std::size_t>(v.size()));
  return t;
}

torch::Tensor to_tensor(const Mask& m) {
  auto t = torch::empty(shape_of(m.dims()), torch::kFloat32);
  float* dst = t.data_ptr<float>();
  for (std::int64_t i = 0; i < m.size(); ++i) dst[i] = static_cast<float>(m[i]);
  return t;
}

torch::Tensor stack_channels(std::span<const Volume> channels) {
  if (channels.empty()) throw std::invalid_argument("stack_channels: no channels");
  const auto dims = channels.front().dims();
  std::vector<std::int64_t> shape{static_cast<std::int64_t>(channels.size()), dims[0], dims[1],
                                  dims[2]};
  auto t = torch::empty(shape, torch::kFloat32);
  float* dst = t.data_ptr<float>();
  const auto n = voxel_count(dims);
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].dims() != dims) throw std::invalid_argument("stack_channels: grid mismatch");
    std::memcpy(dst + c * n, channels[c].data(), sizeof(float) * static_cast<std::size_t>(n));
  }
  return t;
}

Volume volume_from_tensor(const torch::Tensor& t) {
  if (t.dim() != 3) throw std::invalid_argument("volume_from_tensor: expected a 3D tensor");
  auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  Volume v({c.size(0), c.size(1), c.size(2)});
  std::memcpy(v.data(), c.data_ptr<float>(), sizeof(float) * static_cast<std::size_t>(v.size()));
  return v;
}

Mask mask_from_tensor(const torch::Tensor& t) {
  auto v = volume_from_tensor(t);
  Mask m(v.dims());
  for (std::int64_t i = 0; i < v.size(); ++i) m[i] = v[i] != 0.0f ? 1 : 0;
  return m;
}

}  // namespace mpls
