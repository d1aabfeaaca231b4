#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>

#include "mpls/volume.hpp"

namespace mpls {

/// On-disk payload type for written volumes.
enum class NiftiType { UInt8, Int16, Float32 };

/// A single-frame NIfTI-1 image. `affine` holds the three sform rows
/// (x, y, z world coordinates from i, j, k voxel indices).
struct NiftiImage {
  Volume voxels;
  Vec3 spacing{1.0, 1.0, 1.0};
  std::array<std::array<double, 4>, 3> affine{};
  std::string description;
};

/// Reads .nii or .nii.gz. Supports uint8/int16/int32/float32/float64 payloads,
/// either byte order, and applies scl_slope / scl_inter.
NiftiImage read_nifti(const std::filesystem::path& path);

/// Reads a label volume; every nonzero voxel becomes 1.
Mask read_nifti_mask(const std::filesystem::path& path);

/// Writes a volume; the affine is diagonal in `spacing` with zero origin.
void write_nifti(const std::filesystem::path& path, const Volume& v, const Vec3& spacing,
                 NiftiType type = NiftiType::Float32, std::string_view description = {});
void write_nifti(const std::filesystem::path& path, const Mask& m, const Vec3& spacing,
                 std::string_view description = {});

}  // namespace mpls
