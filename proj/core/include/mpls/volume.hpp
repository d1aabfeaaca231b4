#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mpls {

/// Grid extent as (depth, height, width); width is the fastest-varying axis.
using Dims3 = std::array<std::int64_t, 3>;
/// Voxel index in (z, y, x) order. May be negative for padded regions.
using Index3 = std::array<std::int64_t, 3>;
/// Physical quantity in millimetres, same axis order as Dims3.
using Vec3 = std::array<double, 3>;

inline std::int64_t voxel_count(const Dims3& d) { return d[0] * d[1] * d[2]; }

/// Dense 3D grid with value semantics.
template <class T>
class Grid3 {
 public:
  using value_type = T;

  Grid3() = default;
  explicit Grid3(const Dims3& dims, T fill = T{}) : dims_(dims) {
    for (auto n : dims) {
      if (n < 0) throw std::invalid_argument("Grid3: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(voxel_count(dims)), fill);
  }

  const Dims3& dims() const { return dims_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::int64_t offset(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return (z * dims_[1] + y) * dims_[2] + x;
  }
  bool contains(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < dims_[0] && y < dims_[1] && x < dims_[2];
  }

  T& operator()(std::int64_t z, std::int64_t y, std::int64_t x) { return data_[offset(z, y, x)]; }
  const T& operator()(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return data_[offset(z, y, x)];
  }
  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Grid3&) const = default;

 private:
  Dims3 dims_{0, 0, 0};
  std::vector<T> data_;
};

using Volume = Grid3<float>;
using Mask = Grid3<std::uint8_t>;

/// Contrast phases. Channel stacking always follows kPhaseOrder.
enum class Phase { Arterial, Delay, Venous };

inline constexpr std::array<Phase, 3> kPhaseOrder{Phase::Arterial, Phase::Delay, Phase::Venous};

std::string_view phase_name(Phase p);
Phase parse_phase(std::string_view name);

struct PhaseVolume {
  Volume voxels;
  Vec3 spacing{1.0, 1.0, 1.0};
  Phase phase = Phase::Venous;

  void validate() const;
};

/// Co-registered phase volumes of one subject with the lesion ground truth.
/// `organ` is optional (empty grid when not supplied).
struct MultiPhaseCase {
  std::vector<PhaseVolume> phases;
  Mask mask;
  Mask organ;
  std::string subject_id;

  const PhaseVolume& phase(Phase p) const;
  bool has_phase(Phase p) const;
  Dims3 dims() const;
  Vec3 spacing() const;
  /// Throws std::invalid_argument when grids disagree or the mask is not binary.
  void validate() const;
};

/// A cropped multi-channel sub-volume and its mask. `origin` is the index of
/// the patch corner in the parent grid and may lie outside it (zero padding).
struct PatchSample {
  std::vector<Volume> channels;
  Mask mask;
  Index3 origin{0, 0, 0};
  Dims3 size{0, 0, 0};
};

std::int64_t count_nonzero(const Mask& m);
Mask threshold(const Volume& v, float t);
bool is_binary(const Mask& m);

}  // namespace mpls
