#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "mpls/random.hpp"
#include "mpls/volume.hpp"

namespace mpls {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Training-time augmentation settings. Each transform fires independently
/// with its probability; a degenerate interval yields a fixed parameter.
/// `augment` applies the spatial stage first, then the intensity stage.
struct AugmentPolicy {
  // intensity (patch values are assumed normalised to [0, 1])
  double p_brightness = 0.0;
  Interval brightness_range{-0.05, 0.05};  // additive shift
  double p_contrast = 0.0;
  Interval contrast_range{0.9, 1.1};  // gain about the channel mean
  double p_noise = 0.0;
  Interval noise_sigma_range{0.0, 0.02};

  // spatial
  double p_flip = 0.0;  // per enabled axis
  std::array<bool, 3> flip_axes{false, false, false};
  double p_rotate = 0.0;
  std::array<Interval, 3> rotation_deg{Interval{-10, 10}, Interval{-10, 10}, Interval{-10, 10}};
  double p_translate = 0.0;
  std::array<Interval, 3> translation_vox{Interval{-4, 4}, Interval{-4, 4}, Interval{-4, 4}};
  double p_scale = 0.0;
  Interval scale_range{0.9, 1.1};
  double p_shear = 0.0;
  Interval shear_range{-0.05, 0.05};
  double p_elastic = 0.0;
  double elastic_alpha = 2.0;  // peak displacement, voxels
  double elastic_sigma = 6.0;  // smoothing of the random field, voxels

  /// Throws std::invalid_argument on probabilities outside [0, 1] or reversed ranges.
  void validate() const;

  /// Mild settings used for desk-scale training runs.
  static AugmentPolicy desk_defaults();
};

/// Output-to-input coordinate map shared by image and mask:
///   src = centre + linear * (flip(p) - centre) - translation + displacement(p)
struct SpatialTransform {
  std::array<std::array<double, 3>, 3> linear{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 translation{0, 0, 0};
  std::array<bool, 3> flip{false, false, false};
  std::optional<std::array<Volume, 3>> displacement;

  bool is_identity() const;
};

SpatialTransform sample_spatial_transform(const AugmentPolicy& policy, const Dims3& size, Rng& rng);

/// Image channels trilinear (zero outside), mask nearest neighbour.
PatchSample apply_spatial_transform(const PatchSample& patch, const SpatialTransform& t);

PatchSample intensity_augment(const PatchSample& patch, const AugmentPolicy& policy,
                              std::uint64_t seed);
PatchSample spatial_augment(const PatchSample& patch, const AugmentPolicy& policy,
                            std::uint64_t seed);
PatchSample augment(const PatchSample& patch, const AugmentPolicy& policy, std::uint64_t seed);

}  // namespace mpls
