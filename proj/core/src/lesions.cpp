#include "mpls/lesions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mpls/patch.hpp"

namespace mpls {

std::vector<LesionInstance> extract_lesions(const Mask& mask, Connectivity conn, const Vec3& spacing) {
  const auto& d = mask.dims();
  std::vector<Index3> offsets;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (manhattan == 0) continue;
        if (conn == Connectivity::Six && manhattan != 1) continue;
        offsets.push_back({dz, dy, dx});
      }

  std::vector<std::int32_t> label(static_cast<std::size_t>(mask.size()), -1);
  std::vector<LesionInstance> lesions;
  std::vector<Index3> stack;
  for (std::int64_t z = 0; z < d[0]; ++z)
    for (std::int64_t y = 0; y < d[1]; ++y)
      for (std::int64_t x = 0; x < d[2]; ++x) {
        const auto o = mask.offset(z, y, x);
        if (!mask[o] || label[o] >= 0) continue;
        const auto id = static_cast<std::int32_t>(lesions.size());
        LesionInstance les;
        les.bbox_min = {z, y, x};
        les.bbox_max = {z, y, x};
        label[o] = id;
        stack.assign(1, {z, y, x});
        while (!stack.empty()) {
          const auto p = stack.back();
          stack.pop_back();
          les.voxels.push_back(p);
          for (int a = 0; a < 3; ++a) {
            les.bbox_min[a] = std::min(les.bbox_min[a], p[a]);
            les.bbox_max[a] = std::max(les.bbox_max[a], p[a]);
          }
          for (const auto& off : offsets) {
            const Index3 q{p[0] + off[0], p[1] + off[1], p[2] + off[2]};
            if (!mask.contains(q[0], q[1], q[2])) continue;
            const auto qo = mask.offset(q[0], q[1], q[2]);
            if (mask[qo] && label[qo] < 0) {
              label[qo] = id;
              stack.push_back(q);
            }
          }
        }
        std::sort(les.voxels.begin(), les.voxels.end());
        Vec3 sum{0, 0, 0};
        for (const auto& v : les.voxels)
          for (int a = 0; a < 3; ++a) sum[a] += static_cast<double>(v[a]);
        const double n = static_cast<double>(les.voxels.size());
        for (int a = 0; a < 3; ++a) les.centroid_mm[a] = sum[a] / n * spacing[a];
        les.volume_mm3 = n * spacing[0] * spacing[1] * spacing[2];
        lesions.push_back(std::move(les));
      }
  std::stable_sort(lesions.begin(), lesions.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a.bbox_min < b.bbox_min;
  });
  return lesions;
}

Mask lesion_union(std::span<const LesionInstance> lesions, const Dims3& dims) {
  Mask m(dims);
  for (const auto& l : lesions)
    for (const auto& v : l.voxels) m(v[0], v[1], v[2]) = 1;
  return m;
}

CropBox crop_with_margin(const LesionInstance& lesion, const Dims3& volume_dims, double margin,
                         std::int64_t divisor, std::int64_t min_size) {
  if (margin < 0.0) throw std::invalid_argument("crop_with_margin: margin must be >= 0");
  if (divisor < 1 || min_size < 1) throw std::invalid_argument("crop_with_margin: bad padding rule");
  CropBox box;
  const auto span = lesion.span();
  for (int a = 0; a < 3; ++a) {
    const auto extra = static_cast<std::int64_t>(std::llround(margin * static_cast<double>(span[a])));
    const auto low = extra / 2;
    box.lo[a] = std::max<std::int64_t>(0, lesion.bbox_min[a] - low);
    box.hi[a] = std::min<std::int64_t>(volume_dims[a], lesion.bbox_max[a] + 1 + (extra - low));
    const auto size = box.hi[a] - box.lo[a];
    auto input = (size + divisor - 1) / divisor * divisor;
    input = std::max(input, (min_size + divisor - 1) / divisor * divisor);
    box.input_size[a] = input;
    box.input_origin[a] = box.lo[a] - (input - size) / 2;
  }
  return box;
}

RefineResult refine_lesions(const Volume& x_r, const MultiPhaseCase& normalized, const Refiner& refiner,
                            const RefineOptions& opts) {
  if (x_r.dims() != normalized.dims()) throw std::invalid_argument("refine_lesions: grid mismatch");
  RefineResult result{x_r, {}, {}};
  const auto lesions = extract_lesions(threshold(x_r, opts.threshold), opts.connectivity, normalized.spacing());
  for (const auto& les : lesions) {
    if (les.size() <= 1) {
      result.warnings.push_back("single-voxel lesion at (" + std::to_string(les.bbox_min[0]) + ", " +
                                std::to_string(les.bbox_min[1]) + ", " + std::to_string(les.bbox_min[2]) +
                                ") passed through unrefined");
      continue;
    }
    const auto box = crop_with_margin(les, x_r.dims(), opts.margin, opts.divisor, opts.min_size);
    std::vector<Volume> image;
    for (const auto& pv : normalized.phases) image.push_back(crop(pv.voxels, box.input_origin, box.input_size));
    const auto current = crop(x_r, box.input_origin, box.input_size);
    const auto refined = refiner(image, current);
    if (refined.dims() != box.input_size) {
      throw std::runtime_error("refine_lesions: refiner returned a wrong window size");
    }
    for (std::int64_t z = box.lo[0]; z < box.hi[0]; ++z)
      for (std::int64_t y = box.lo[1]; y < box.hi[1]; ++y)
        for (std::int64_t x = box.lo[2]; x < box.hi[2]; ++x) {
          result.probabilities(z, y, x) =
              refined(z - box.input_origin[0], y - box.input_origin[1], x - box.input_origin[2]);
        }
    result.boxes.push_back(box);
  }
  return result;
}

}  // namespace mpls
