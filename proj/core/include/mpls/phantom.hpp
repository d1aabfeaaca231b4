#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "mpls/manifest.hpp"
#include "mpls/volume.hpp"

namespace mpls {

/// Contrast behaviour of a synthetic lesion across phases.
enum class LesionProfile { Hyperenhancing, Hypoenhancing, Retention };

inline constexpr std::array<LesionProfile, 3> kLesionProfiles{
    LesionProfile::Hyperenhancing, LesionProfile::Hypoenhancing, LesionProfile::Retention};

/// Lesion minus organ HU, indexed by kPhaseOrder (arterial, delay, venous).
struct ProfileOffsets {
  std::array<double, 3> hyperenhancing{70.0, -35.0, -45.0};  // arterial uptake, washout
  std::array<double, 3> hypoenhancing{-45.0, -30.0, -55.0};
  std::array<double, 3> retention{-35.0, 45.0, -10.0};  // delayed retention

  const std::array<double, 3>& of(LesionProfile p) const;
};

struct PhantomSpec {
  Dims3 dims{64, 64, 64};
  Vec3 spacing{1.0, 1.0, 1.0};
  /// Organ semi-axes as fractions of the volume extent, and the maximal
  /// random shift of its centre in voxels.
  Vec3 organ_radii{0.40, 0.36, 0.42};
  double organ_jitter = 3.0;
  int lesions_min = 1;
  int lesions_max = 3;
  double diameter_min_mm = 8.0;
  double diameter_max_mm = 18.0;
  double axis_ratio_max = 1.25;  // ellipsoid elongation, volume preserving
  /// Organ HU per phase (arterial, delay, venous) and outside-organ HU.
  std::array<double, 3> organ_hu{70.0, 90.0, 110.0};
  double background_hu = -60.0;
  ProfileOffsets offsets;
  double noise_sigma_hu = 8.0;
  double texture_hu = 6.0;
  double texture_scale_mm = 3.0;
  double edge_softness_mm = 0.7;
  int max_retries = 400;

  void validate() const;
};

struct PhantomLesion {
  Vec3 centre_vox{0, 0, 0};
  double diameter_mm = 0.0;
  LesionProfile profile = LesionProfile::Hyperenhancing;
};

struct Phantom {
  MultiPhaseCase image;  // HU volumes (integer valued), lesion mask, organ mask
  std::vector<PhantomLesion> lesions;
};

/// Deterministic in (spec, seed). Lesions are rotated ellipsoids fully inside
/// the organ and at least two voxels apart from each other.
Phantom generate_case(const PhantomSpec& spec, std::uint64_t seed, const std::string& subject_id = "phantom");

struct PhantomDataset {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::vector<std::uint64_t> seeds;  // train cases first
  std::vector<Phantom> cases;
};

/// Writes n_train + n_test cases and the manifests train.json and test.json
/// under `out_dir`. Case i uses derive_seed(seed, i).
PhantomDataset generate_dataset(const PhantomSpec& spec, int n_train, int n_test, std::uint64_t seed,
                                const std::filesystem::path& out_dir, bool keep_cases = false);

}  // namespace mpls
