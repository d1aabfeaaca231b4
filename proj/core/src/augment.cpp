#include "mpls/augment.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "mpls/preprocess.hpp"

namespace mpls {
namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

Mat3 rotation(int axis, double deg) {
  const double rad = deg * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  Mat3 r{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  r[i][i] = c;
  r[i][j] = -s;
  r[j][i] = s;
  r[j][j] = c;
  return r;
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument(std::string("augment policy: ") + name + " must be in [0, 1]");
  }
}

void check_interval(const Interval& i, const char* name) {
  if (!(i.lo <= i.hi)) {
    throw std::invalid_argument(std::string("augment policy: ") + name + " range is reversed");
  }
}

double draw(Rng& rng, const Interval& i) { return i.lo == i.hi ? i.lo : uniform(rng, i.lo, i.hi); }

float sample_linear(const Volume& v, double z, double y, double x) {
  const auto& d = v.dims();
  const double fz = std::floor(z), fy = std::floor(y), fx = std::floor(x);
  const auto z0 = static_cast<std::int64_t>(fz), y0 = static_cast<std::int64_t>(fy),
             x0 = static_cast<std::int64_t>(fx);
  const double wz = z - fz, wy = y - fy, wx = x - fx;
  auto at = [&](std::int64_t zz, std::int64_t yy, std::int64_t xx) -> double {
    if (zz < 0 || yy < 0 || xx < 0 || zz >= d[0] || yy >= d[1] || xx >= d[2]) return 0.0;
    return v(zz, yy, xx);
  };
  if (wz == 0.0 && wy == 0.0 && wx == 0.0) return static_cast<float>(at(z0, y0, x0));
  double acc = 0.0;
  for (int dz = 0; dz <= 1; ++dz) {
    const double a = dz ? wz : 1.0 - wz;
    if (a == 0.0) continue;
    for (int dy = 0; dy <= 1; ++dy) {
      const double b = dy ? wy : 1.0 - wy;
      if (b == 0.0) continue;
      for (int dx = 0; dx <= 1; ++dx) {
        const double c = dx ? wx : 1.0 - wx;
        if (c == 0.0) continue;
        acc += a * b * c * at(z0 + dz, y0 + dy, x0 + dx);
      }
    }
  }
  return static_cast<float>(acc);
}

// Snap coordinates that are integers up to rounding so that exact index
// permutations (flips, quarter turns) stay exact.
double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

void AugmentPolicy::validate() const {
  check_probability(p_brightness, "p_brightness");
  check_probability(p_contrast, "p_contrast");
  check_probability(p_noise, "p_noise");
  check_probability(p_flip, "p_flip");
  check_probability(p_rotate, "p_rotate");
  check_probability(p_translate, "p_translate");
  check_probability(p_scale, "p_scale");
  check_probability(p_shear, "p_shear");
  check_probability(p_elastic, "p_elastic");
  check_interval(brightness_range, "brightness");
  check_interval(contrast_range, "contrast");
  check_interval(noise_sigma_range, "noise_sigma");
  check_interval(scale_range, "scale");
  check_interval(shear_range, "shear");
  for (const auto& r : rotation_deg) check_interval(r, "rotation");
  for (const auto& r : translation_vox) check_interval(r, "translation");
  if (noise_sigma_range.lo < 0.0) throw std::invalid_argument("augment policy: negative noise sigma");
  if (scale_range.lo <= 0.0) throw std::invalid_argument("augment policy: scale must be positive");
  if (elastic_alpha < 0.0 || elastic_sigma <= 0.0) {
    throw std::invalid_argument("augment policy: elastic alpha >= 0 and sigma > 0 required");
  }
}

AugmentPolicy AugmentPolicy::desk_defaults() {
  AugmentPolicy p;
  p.p_brightness = 0.3;
  p.p_contrast = 0.3;
  p.p_noise = 0.3;
  p.p_flip = 0.5;
  p.flip_axes = {true, true, true};
  p.p_rotate = 0.2;
  p.p_translate = 0.2;
  p.p_scale = 0.2;
  p.p_shear = 0.1;
  p.p_elastic = 0.1;
  return p;
}

bool SpatialTransform::is_identity() const {
  for (int i = 0; i < 3; ++i) {
    if (flip[i] || translation[i] != 0.0) return false;
    for (int j = 0; j < 3; ++j) {
      if (linear[i][j] != (i == j ? 1.0 : 0.0)) return false;
    }
  }
  return !displacement.has_value();
}

SpatialTransform sample_spatial_transform(const AugmentPolicy& policy, const Dims3& size, Rng& rng) {
  policy.validate();
  SpatialTransform t;
  for (int a = 0; a < 3; ++a) {
    if (policy.flip_axes[a] && bernoulli(rng, policy.p_flip)) t.flip[a] = true;
  }
  if (bernoulli(rng, policy.p_rotate)) {
    for (int a = 0; a < 3; ++a) {
      const double deg = draw(rng, policy.rotation_deg[a]);
      if (deg != 0.0) t.linear = matmul(t.linear, rotation(a, deg));
    }
  }
  if (bernoulli(rng, policy.p_scale)) {
    const double s = 1.0 / draw(rng, policy.scale_range);
    Mat3 m{{{s, 0, 0}, {0, s, 0}, {0, 0, s}}};
    t.linear = matmul(t.linear, m);
  }
  if (bernoulli(rng, policy.p_shear)) {
    Mat3 m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    m[0][1] = draw(rng, policy.shear_range);
    m[1][2] = draw(rng, policy.shear_range);
    m[2][0] = draw(rng, policy.shear_range);
    t.linear = matmul(t.linear, m);
  }
  for (auto& row : t.linear)
    for (auto& v : row) v = snap(v);
  if (bernoulli(rng, policy.p_translate)) {
    for (int a = 0; a < 3; ++a) t.translation[a] = draw(rng, policy.translation_vox[a]);
  }
  if (policy.elastic_alpha > 0.0 && bernoulli(rng, policy.p_elastic)) {
    std::array<Volume, 3> field;
    for (auto& f : field) {
      Volume noise(size);
      for (auto& v : noise.values()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
      f = gaussian_smooth(noise, {policy.elastic_sigma, policy.elastic_sigma, policy.elastic_sigma});
      float peak = 0.0f;
      for (float v : f.values()) peak = std::max(peak, std::abs(v));
      const float scale = peak > 0.0f ? static_cast<float>(policy.elastic_alpha) / peak : 0.0f;
      for (auto& v : f.values()) v *= scale;
    }
    t.displacement = std::move(field);
  }
  return t;
}

PatchSample apply_spatial_transform(const PatchSample& patch, const SpatialTransform& t) {
  if (t.is_identity()) return patch;
  const auto& d = patch.mask.dims();
  for (const auto& ch : patch.channels) {
    if (ch.dims() != d) throw std::invalid_argument("spatial transform: patch grids differ");
  }
  const Vec3 centre{(d[0] - 1) / 2.0, (d[1] - 1) / 2.0, (d[2] - 1) / 2.0};
  PatchSample out = patch;
  for (auto& ch : out.channels) ch.fill(0.0f);
  out.mask.fill(0);
  for (std::int64_t z = 0; z < d[0]; ++z)
    for (std::int64_t y = 0; y < d[1]; ++y)
      for (std::int64_t x = 0; x < d[2]; ++x) {
        Vec3 q{static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
        for (int a = 0; a < 3; ++a) {
          if (t.flip[a]) q[a] = static_cast<double>(d[a] - 1) - q[a];
          q[a] -= centre[a];
        }
        Vec3 src{};
        for (int i = 0; i < 3; ++i) {
          src[i] = centre[i] - t.translation[i];
          for (int j = 0; j < 3; ++j) src[i] += t.linear[i][j] * q[j];
          if (t.displacement) src[i] += (*t.displacement)[i](z, y, x);
          src[i] = snap(src[i]);
        }
        for (std::size_t c = 0; c < patch.channels.size(); ++c) {
          out.channels[c](z, y, x) = sample_linear(patch.channels[c], src[0], src[1], src[2]);
        }
        const auto mz = static_cast<std::int64_t>(std::floor(src[0] + 0.5));
        const auto my = static_cast<std::int64_t>(std::floor(src[1] + 0.5));
        const auto mx = static_cast<std::int64_t>(std::floor(src[2] + 0.5));
        if (patch.mask.contains(mz, my, mx)) out.mask(z, y, x) = patch.mask(mz, my, mx);
      }
  return out;
}

PatchSample intensity_augment(const PatchSample& patch, const AugmentPolicy& policy,
                              std::uint64_t seed) {
  policy.validate();
  Rng rng(seed);
  PatchSample out = patch;
  const bool do_brightness = bernoulli(rng, policy.p_brightness);
  const double shift = draw(rng, policy.brightness_range);
  const bool do_contrast = bernoulli(rng, policy.p_contrast);
  const double gain = draw(rng, policy.contrast_range);
  const bool do_noise = bernoulli(rng, policy.p_noise);
  const double sigma = draw(rng, policy.noise_sigma_range);
  if (!do_brightness && !do_contrast && !do_noise) return out;
  for (auto& ch : out.channels) {
    if (do_brightness && shift != 0.0) {
      for (auto& v : ch.values()) v = static_cast<float>(v + shift);
    }
    if (do_contrast && gain != 1.0) {
      double mean = 0.0;
      for (float v : ch.values()) mean += v;
      mean /= static_cast<double>(std::max<std::int64_t>(1, ch.size()));
      for (auto& v : ch.values()) v = static_cast<float>(mean + gain * (v - mean));
    }
    if (do_noise && sigma > 0.0) {
      for (auto& v : ch.values()) v = static_cast<float>(v + sigma * standard_normal(rng));
    }
    for (auto& v : ch.values()) v = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

PatchSample spatial_augment(const PatchSample& patch, const AugmentPolicy& policy,
                            std::uint64_t seed) {
  Rng rng(seed);
  const auto t = sample_spatial_transform(policy, patch.mask.dims(), rng);
  return apply_spatial_transform(patch, t);
}

PatchSample augment(const PatchSample& patch, const AugmentPolicy& policy, std::uint64_t seed) {
  auto spatial = spatial_augment(patch, policy, derive_seed(seed, 0));
  return intensity_augment(spatial, policy, derive_seed(seed, 1));
}

}  // namespace mpls
