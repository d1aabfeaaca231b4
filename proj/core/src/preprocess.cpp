#include "mpls/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mpls {
namespace {

void check_spacing(const Vec3& s, const char* what) {
  for (double v : s) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string(what) + " must be positive");
  }
}

struct AxisSample {
  std::int64_t i0;
  std::int64_t i1;
  float w1;  // weight of i1
};

std::vector<AxisSample> linear_axis(std::int64_t n_out, std::int64_t n_in, double ratio) {
  std::vector<AxisSample> out(static_cast<std::size_t>(n_out));
  for (std::int64_t i = 0; i < n_out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    const auto i1 = std::min(i0 + 1, n_in - 1);
    out[i] = {i0, i1, static_cast<float>(src - static_cast<double>(i0))};
  }
  return out;
}

std::vector<std::int64_t> nearest_axis(std::int64_t n_out, std::int64_t n_in, double ratio) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(n_out));
  for (std::int64_t i = 0; i < n_out; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    out[i] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(src + 0.5)), 0, n_in - 1);
  }
  return out;
}

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + radius] = static_cast<float>(w);
    sum += w;
  }
  for (auto& w : k) w = static_cast<float>(w / sum);
  return k;
}

Volume smooth_axis(const Volume& v, int axis, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const auto& d = v.dims();
  Volume out(d);
  for (std::int64_t z = 0; z < d[0]; ++z) {
    for (std::int64_t y = 0; y < d[1]; ++y) {
      for (std::int64_t x = 0; x < d[2]; ++x) {
        Index3 p{z, y, x};
        float acc = 0.0f;
        for (int t = -radius; t <= radius; ++t) {
          Index3 q = p;
          q[axis] = std::clamp<std::int64_t>(p[axis] + t, 0, d[axis] - 1);
          acc += k[t + radius] * v(q[0], q[1], q[2]);
        }
        out(z, y, x) = acc;
      }
    }
  }
  return out;
}

}  // namespace

Dims3 resampled_dims(const Dims3& dims, const Vec3& from, const Vec3& to) {
  check_spacing(from, "source spacing");
  check_spacing(to, "target spacing");
  Dims3 out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(static_cast<double>(dims[a]) * from[a] / to[a])));
  }
  return out;
}

Volume gaussian_smooth(const Volume& v, const Vec3& sigma_voxels) {
  Volume out = v;
  for (int a = 0; a < 3; ++a) {
    if (sigma_voxels[a] > 0.0) out = smooth_axis(out, a, sigma_voxels[a]);
  }
  return out;
}

Volume resample(const Volume& v, const Vec3& from, const Vec3& to, const Dims3& out_dims,
                Interpolation interp, bool antialias) {
  check_spacing(from, "source spacing");
  check_spacing(to, "target spacing");
  Vec3 ratio{to[0] / from[0], to[1] / from[1], to[2] / from[2]};
  const Volume* src = &v;
  Volume smoothed;
  if (antialias) {
    Vec3 sigma{};
    bool any = false;
    for (int a = 0; a < 3; ++a) {
      if (ratio[a] > 1.0) {
        sigma[a] = std::sqrt(ratio[a] * ratio[a] - 1.0) / 2.0;
        any = true;
      }
    }
    if (any) {
      smoothed = gaussian_smooth(v, sigma);
      src = &smoothed;
    }
  }
  const auto& in_d = v.dims();
  Volume out(out_dims);
  if (interp == Interpolation::Nearest) {
    const auto az = nearest_axis(out_dims[0], in_d[0], ratio[0]);
    const auto ay = nearest_axis(out_dims[1], in_d[1], ratio[1]);
    const auto ax = nearest_axis(out_dims[2], in_d[2], ratio[2]);
    for (std::int64_t z = 0; z < out_dims[0]; ++z)
      for (std::int64_t y = 0; y < out_dims[1]; ++y)
        for (std::int64_t x = 0; x < out_dims[2]; ++x) out(z, y, x) = (*src)(az[z], ay[y], ax[x]);
    return out;
  }
  const auto az = linear_axis(out_dims[0], in_d[0], ratio[0]);
  const auto ay = linear_axis(out_dims[1], in_d[1], ratio[1]);
  const auto ax = linear_axis(out_dims[2], in_d[2], ratio[2]);
  for (std::int64_t z = 0; z < out_dims[0]; ++z) {
    const auto& sz = az[z];
    for (std::int64_t y = 0; y < out_dims[1]; ++y) {
      const auto& sy = ay[y];
      for (std::int64_t x = 0; x < out_dims[2]; ++x) {
        const auto& sx = ax[x];
        auto lerp_x = [&](std::int64_t zz, std::int64_t yy) {
          const float a = (*src)(zz, yy, sx.i0);
          return sx.w1 == 0.0f ? a : a + sx.w1 * ((*src)(zz, yy, sx.i1) - a);
        };
        auto lerp_y = [&](std::int64_t zz) {
          const float a = lerp_x(zz, sy.i0);
          return sy.w1 == 0.0f ? a : a + sy.w1 * (lerp_x(zz, sy.i1) - a);
        };
        const float a = lerp_y(sz.i0);
        out(z, y, x) = sz.w1 == 0.0f ? a : a + sz.w1 * (lerp_y(sz.i1) - a);
      }
    }
  }
  return out;
}

Mask resample(const Mask& m, const Vec3& from, const Vec3& to, const Dims3& out_dims) {
  check_spacing(from, "source spacing");
  check_spacing(to, "target spacing");
  const auto& in_d = m.dims();
  const auto az = nearest_axis(out_dims[0], in_d[0], to[0] / from[0]);
  const auto ay = nearest_axis(out_dims[1], in_d[1], to[1] / from[1]);
  const auto ax = nearest_axis(out_dims[2], in_d[2], to[2] / from[2]);
  Mask out(out_dims);
  for (std::int64_t z = 0; z < out_dims[0]; ++z)
    for (std::int64_t y = 0; y < out_dims[1]; ++y)
      for (std::int64_t x = 0; x < out_dims[2]; ++x) out(z, y, x) = m(az[z], ay[y], ax[x]);
  return out;
}

MultiPhaseCase resample_isotropic(const MultiPhaseCase& c, const Vec3& target_spacing,
                                  const ResampleOptions& opts) {
  check_spacing(target_spacing, "target spacing");
  c.validate();
  const auto from = c.spacing();
  const auto out_dims = resampled_dims(c.dims(), from, target_spacing);
  MultiPhaseCase out;
  out.subject_id = c.subject_id;
  for (const auto& pv : c.phases) {
    out.phases.push_back(
        {resample(pv.voxels, from, target_spacing, out_dims, opts.image, opts.antialias),
         target_spacing, pv.phase});
  }
  out.mask = resample(c.mask, from, target_spacing, out_dims);
  if (!c.organ.empty()) out.organ = resample(c.organ, from, target_spacing, out_dims);
  return out;
}

Volume clip_normalize(const Volume& v, float lo, float hi) {
  if (!(lo < hi)) throw std::invalid_argument("clip_normalize: lo must be below hi");
  Volume out(v.dims());
  const double range = static_cast<double>(hi) - static_cast<double>(lo);
  for (std::int64_t i = 0; i < v.size(); ++i) {
    const double c = std::clamp(static_cast<double>(v[i]), static_cast<double>(lo),
                                static_cast<double>(hi));
    out[i] = static_cast<float>((c - lo) / range);
  }
  return out;
}

PhaseVolume clip_normalize(const PhaseVolume& v, float lo, float hi) {
  return {clip_normalize(v.voxels, lo, hi), v.spacing, v.phase};
}

MultiPhaseCase clip_normalize(const MultiPhaseCase& c, float lo, float hi) {
  MultiPhaseCase out = c;
  for (auto& pv : out.phases) pv.voxels = clip_normalize(pv.voxels, lo, hi);
  return out;
}

}  // namespace mpls
