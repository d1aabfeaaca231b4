#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mpls/volume.hpp"

namespace mpls {

enum class Connectivity { Six = 6, TwentySix = 26 };

/// One connected lesion component. The bounding box is inclusive.
struct LesionInstance {
  std::vector<Index3> voxels;
  Index3 bbox_min{0, 0, 0};
  Index3 bbox_max{0, 0, 0};
  Vec3 centroid_mm{0, 0, 0};
  double volume_mm3 = 0.0;

  std::int64_t size() const { return static_cast<std::int64_t>(voxels.size()); }
  Dims3 span() const {
    return {bbox_max[0] - bbox_min[0] + 1, bbox_max[1] - bbox_min[1] + 1, bbox_max[2] - bbox_min[2] + 1};
  }
};

/// Maximal connected components, largest first; equal sizes are ordered by
/// the lexicographic bounding-box origin. Voxels are listed in raster order.
std::vector<LesionInstance> extract_lesions(const Mask& mask, Connectivity conn = Connectivity::TwentySix,
                                            const Vec3& spacing = {1.0, 1.0, 1.0});

Mask lesion_union(std::span<const LesionInstance> lesions, const Dims3& dims);

/// Region handled for one lesion. [lo, hi) is the bounding box grown by
/// margin * span per axis (split evenly, odd remainder on the high side) and
/// clamped to the volume. The network sees the window at `input_origin` of
/// `input_size`, which is the box padded up to the divisor and minimum size.
struct CropBox {
  Index3 lo{0, 0, 0};
  Index3 hi{0, 0, 0};
  Index3 input_origin{0, 0, 0};
  Dims3 input_size{0, 0, 0};

  Dims3 size() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
  bool contains(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return z >= lo[0] && z < hi[0] && y >= lo[1] && y < hi[1] && x >= lo[2] && x < hi[2];
  }
};

CropBox crop_with_margin(const LesionInstance& lesion, const Dims3& volume_dims, double margin = 0.2,
                         std::int64_t divisor = 1, std::int64_t min_size = 1);

/// Predicts lesion probabilities over a crop window. `image` holds the phase
/// channels of the window, `current` the incoming probability map there.
using Refiner = std::function<Volume(const std::vector<Volume>& image, const Volume& current)>;

struct RefineOptions {
  float threshold = 0.5f;
  double margin = 0.2;
  Connectivity connectivity = Connectivity::TwentySix;
  std::int64_t divisor = 8;
  std::int64_t min_size = 16;
};

struct RefineResult {
  Volume probabilities;
  std::vector<CropBox> boxes;
  std::vector<std::string> warnings;
};

/// Per-lesion refinement of `x_r`. Lesions are taken from x_r >= threshold and
/// processed largest first; each refined window overwrites x_r inside its
/// clamped box, so where boxes overlap the later (smaller) lesion wins.
/// Voxels outside every box are returned unchanged. Single-voxel lesions are
/// passed through with a warning.
RefineResult refine_lesions(const Volume& x_r, const MultiPhaseCase& normalized, const Refiner& refiner,
                            const RefineOptions& opts = {});

}  // namespace mpls
