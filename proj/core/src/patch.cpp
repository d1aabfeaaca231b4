#include "mpls/patch.hpp"

#include <algorithm>
#include <stdexcept>

namespace mpls {
namespace {

template <class T>
Grid3<T> crop_grid(const Grid3<T>& v, const Index3& origin, const Dims3& size, T pad) {
  for (auto n : size) {
    if (n <= 0) throw std::invalid_argument("crop: patch size must be positive");
  }
  Grid3<T> out(size, pad);
  const auto& d = v.dims();
  const std::int64_t x0 = std::max<std::int64_t>(0, -origin[2]);
  const std::int64_t x1 = std::min<std::int64_t>(size[2], d[2] - origin[2]);
  if (x1 <= x0) return out;
  for (std::int64_t z = 0; z < size[0]; ++z) {
    const auto sz = origin[0] + z;
    if (sz < 0 || sz >= d[0]) continue;
    for (std::int64_t y = 0; y < size[1]; ++y) {
      const auto sy = origin[1] + y;
      if (sy < 0 || sy >= d[1]) continue;
      std::copy_n(&v(sz, sy, origin[2] + x0), x1 - x0, &out(z, y, x0));
    }
  }
  return out;
}

template <class T>
void paste_grid(Grid3<T>& dst, const Grid3<T>& src, const Index3& origin) {
  const auto& d = dst.dims();
  const auto& s = src.dims();
  for (std::int64_t z = 0; z < s[0]; ++z)
    for (std::int64_t y = 0; y < s[1]; ++y)
      for (std::int64_t x = 0; x < s[2]; ++x) {
        const auto tz = origin[0] + z, ty = origin[1] + y, tx = origin[2] + x;
        if (tz < 0 || ty < 0 || tx < 0 || tz >= d[0] || ty >= d[1] || tx >= d[2]) continue;
        dst(tz, ty, tx) = src(z, y, x);
      }
}

}  // namespace

Volume crop(const Volume& v, const Index3& origin, const Dims3& size, float pad) {
  return crop_grid(v, origin, size, pad);
}

Mask crop(const Mask& m, const Index3& origin, const Dims3& size) {
  return crop_grid<std::uint8_t>(m, origin, size, 0);
}

void paste(Volume& dst, const Volume& src, const Index3& origin) { paste_grid(dst, src, origin); }
void paste(Mask& dst, const Mask& src, const Index3& origin) { paste_grid(dst, src, origin); }

PatchSample extract_patch(const MultiPhaseCase& c, const Index3& origin, const Dims3& size,
                          std::span<const Phase> phases) {
  if (phases.empty()) throw std::invalid_argument("extract_patch: empty phase subset");
  PatchSample p;
  p.origin = origin;
  p.size = size;
  p.channels.reserve(phases.size());
  for (auto ph : phases) p.channels.push_back(crop(c.phase(ph).voxels, origin, size, 0.0f));
  p.mask = c.mask.empty() ? Mask(size) : crop(c.mask, origin, size);
  return p;
}

PatchSampler::PatchSampler(const Mask& mask, const Dims3& size, double lesion_bias,
                           const Dims3& padding)
    : dims_(mask.dims()), size_(size), padding_(padding), lesion_bias_(lesion_bias) {
  if (lesion_bias < 0.0) throw std::invalid_argument("PatchSampler: lesion_bias must be >= 0");
  for (int a = 0; a < 3; ++a) {
    if (size[a] <= 0) throw std::invalid_argument("PatchSampler: patch size must be positive");
    if (padding[a] < 0) throw std::invalid_argument("PatchSampler: padding must be >= 0");
    range_[a] = dims_[a] + 2 * padding[a] - size[a] + 1;
    if (range_[a] < 1) {
      throw std::invalid_argument("PatchSampler: patch size exceeds the padded grid");
    }
  }
  const auto D = dims_[0], H = dims_[1], W = dims_[2];
  table_.assign(static_cast<std::size_t>((D + 1) * (H + 1) * (W + 1)), 0);
  auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) -> std::int64_t& {
    return table_[static_cast<std::size_t>((z * (H + 1) + y) * (W + 1) + x)];
  };
  for (std::int64_t z = 1; z <= D; ++z)
    for (std::int64_t y = 1; y <= H; ++y)
      for (std::int64_t x = 1; x <= W; ++x) {
        at(z, y, x) = (mask(z - 1, y - 1, x - 1) != 0 ? 1 : 0) + at(z - 1, y, x) + at(z, y - 1, x) +
                      at(z, y, x - 1) - at(z - 1, y - 1, x) - at(z - 1, y, x - 1) -
                      at(z, y - 1, x - 1) + at(z - 1, y - 1, x - 1);
      }
  const auto total = static_cast<std::uint64_t>(origin_count());
  for (std::uint64_t i = 0; i < total; ++i) {
    (contains_lesion(origin_of(i)) ? lesion_ : background_).push_back(i);
  }
}

Index3 PatchSampler::origin_of(std::uint64_t linear) const {
  const auto x = static_cast<std::int64_t>(linear % range_[2]);
  const auto rest = static_cast<std::int64_t>(linear / range_[2]);
  const auto y = rest % range_[1];
  const auto z = rest / range_[1];
  return {z - padding_[0], y - padding_[1], x - padding_[2]};
}

std::int64_t PatchSampler::lesion_sum(const Index3& lo, const Index3& hi) const {
  const auto H = dims_[1], W = dims_[2];
  auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return table_[static_cast<std::size_t>((z * (H + 1) + y) * (W + 1) + x)];
  };
  return at(hi[0], hi[1], hi[2]) - at(lo[0], hi[1], hi[2]) - at(hi[0], lo[1], hi[2]) -
         at(hi[0], hi[1], lo[2]) + at(lo[0], lo[1], hi[2]) + at(lo[0], hi[1], lo[2]) +
         at(hi[0], lo[1], lo[2]) - at(lo[0], lo[1], lo[2]);
}

bool PatchSampler::contains_lesion(const Index3& origin) const {
  Index3 lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::clamp<std::int64_t>(origin[a], 0, dims_[a]);
    hi[a] = std::clamp<std::int64_t>(origin[a] + size_[a], 0, dims_[a]);
    if (hi[a] <= lo[a]) return false;
  }
  return lesion_sum(lo, hi) > 0;
}

double PatchSampler::lesion_probability() const {
  const double wl = (1.0 + lesion_bias_) * static_cast<double>(lesion_.size());
  const double wb = static_cast<double>(background_.size());
  return wl / (wl + wb);
}

Index3 PatchSampler::draw(Rng& rng) const {
  const bool pick_lesion =
      !lesion_.empty() && (background_.empty() || uniform01(rng) < lesion_probability());
  const auto& pool = pick_lesion ? lesion_ : background_;
  return origin_of(pool[uniform_index(rng, pool.size())]);
}

std::vector<Index3> weighted_sample_origins(const MultiPhaseCase& c, const Dims3& size, int count,
                                            double lesion_bias, std::uint64_t seed,
                                            const Dims3& padding) {
  if (count < 1) throw std::invalid_argument("weighted_sample_origins: count must be >= 1");
  PatchSampler sampler(c.mask, size, lesion_bias, padding);
  Rng rng(seed);
  std::vector<Index3> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(sampler.draw(rng));
  return out;
}

}  // namespace mpls
