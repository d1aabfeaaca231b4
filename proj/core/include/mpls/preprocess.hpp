#pragma once

#include "mpls/volume.hpp"

namespace mpls {

enum class Interpolation { Nearest, Linear };

/// Image interpolation order and the downsampling prefilter. Masks are always
/// resampled with nearest neighbour.
struct ResampleOptions {
  Interpolation image = Interpolation::Linear;
  /// Gaussian prefilter along axes whose spacing grows.
  bool antialias = false;
};

/// Output grid for a spacing change: round(n * from / to), at least 1.
Dims3 resampled_dims(const Dims3& dims, const Vec3& from, const Vec3& to);

/// Resamples on voxel centres: output voxel i samples input coordinate
/// (i + 0.5) * to / from - 0.5 per axis, clamped to the grid edge.
Volume resample(const Volume& v, const Vec3& from, const Vec3& to, const Dims3& out_dims,
                Interpolation interp, bool antialias = false);
Mask resample(const Mask& m, const Vec3& from, const Vec3& to, const Dims3& out_dims);

/// Resamples every phase and both masks to `target_spacing`.
/// Throws std::invalid_argument for non-positive spacing.
MultiPhaseCase resample_isotropic(const MultiPhaseCase& c, const Vec3& target_spacing,
                                  const ResampleOptions& opts = {});

/// Clips to [lo, hi] and maps linearly onto [0, 1].
Volume clip_normalize(const Volume& v, float lo, float hi);
PhaseVolume clip_normalize(const PhaseVolume& v, float lo, float hi);
MultiPhaseCase clip_normalize(const MultiPhaseCase& c, float lo, float hi);

/// Separable Gaussian smoothing with per-axis sigma in voxels (0 skips an
/// axis). Kernels are truncated at 3 sigma; borders replicate the edge value.
Volume gaussian_smooth(const Volume& v, const Vec3& sigma_voxels);

}  // namespace mpls
