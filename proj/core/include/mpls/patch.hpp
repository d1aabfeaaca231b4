#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mpls/random.hpp"
#include "mpls/volume.hpp"

namespace mpls {

/// Copies the box [origin, origin + size) out of `v`; voxels outside the grid
/// take `pad`.
Volume crop(const Volume& v, const Index3& origin, const Dims3& size, float pad = 0.0f);
Mask crop(const Mask& m, const Index3& origin, const Dims3& size);

/// Writes `src` back into `dst` at `origin`, skipping voxels outside `dst`.
void paste(Volume& dst, const Volume& src, const Index3& origin);
void paste(Mask& dst, const Mask& src, const Index3& origin);

/// Stacks the requested phases channelwise (in the order given) and crops the
/// mask identically. Out-of-grid voxels are zero, the normalised minimum.
PatchSample extract_patch(const MultiPhaseCase& c, const Index3& origin, const Dims3& size,
                          std::span<const Phase> phases);

/// Draws patch origins where every origin whose patch holds at least one lesion
/// voxel carries weight (1 + lesion_bias) and every other origin weight 1.
/// Origins range over [-padding, dims + padding - size] per axis.
class PatchSampler {
 public:
  PatchSampler(const Mask& mask, const Dims3& size, double lesion_bias,
               const Dims3& padding = {0, 0, 0});

  Index3 draw(Rng& rng) const;

  bool contains_lesion(const Index3& origin) const;
  std::int64_t origin_count() const { return voxel_count(range_); }
  std::int64_t lesion_origin_count() const { return static_cast<std::int64_t>(lesion_.size()); }
  std::int64_t background_origin_count() const {
    return static_cast<std::int64_t>(background_.size());
  }
  /// Probability that one draw lands on a lesion-containing origin.
  double lesion_probability() const;

 private:
  Index3 origin_of(std::uint64_t linear) const;
  std::int64_t lesion_sum(const Index3& lo, const Index3& hi) const;

  Dims3 dims_;
  Dims3 size_;
  Dims3 padding_;
  Dims3 range_;
  double lesion_bias_;
  std::vector<std::int64_t> table_;  // summed-area table, (D+1)(H+1)(W+1)
  std::vector<std::uint64_t> lesion_;
  std::vector<std::uint64_t> background_;
};

/// Convenience wrapper: `count` origins from a sampler seeded with `seed`.
std::vector<Index3> weighted_sample_origins(const MultiPhaseCase& c, const Dims3& size, int count,
                                            double lesion_bias, std::uint64_t seed,
                                            const Dims3& padding = {0, 0, 0});

}  // namespace mpls
