
#include <cmath>

#include "helpers.hpp"
#include "mpls/augment.hpp"

// libtorch defines its own CHECK macro; doctest's has to win.
#undef CHECK
#include <doctest.h>

using namespace mpls;

namespace {

PatchSample make_patch(const Dims3& d, std::uint64_t seed) {
  PatchSample p;
  p.size = d;
  for (int c = 0; c < 3; ++c) p.channels.push_back(testing::random_volume(d, seed + c));
  p.mask = testing::random_mask(d, 0.2, seed + 10);
  return p;
}

// A bar along the width axis through the patch centre.
PatchSample bar_patch(std::int64_t n) {
  PatchSample p;
  p.size = {n, n, n};
  Volume v({n, n, n});
  p.mask = Mask({n, n, n});
  for (std::int64_t z = n / 2 - 1; z <= n / 2; ++z)
    for (std::int64_t y = n / 2 - 1; y <= n / 2; ++y)
      for (std::int64_t x = 0; x < n; ++x) {
        v(z, y, x) = 1.0f;
        p.mask(z, y, x) = 1;
      }
  p.channels = {v};
  return p;
}

}  // namespace

TEST_CASE("a policy with every probability zero is the identity") {
  const auto p = make_patch({8, 8, 8}, 1);
  AugmentPolicy none;
  const auto out = augment(p, none, 123);
  CHECK(out.channels == p.channels);
  CHECK(out.mask == p.mask);
}

TEST_CASE("brightness shift adds a constant") {
  PatchSample p;
  p.size = {4, 4, 4};
  p.channels = {Volume({4, 4, 4}, 0.5f)};
  p.mask = Mask({4, 4, 4});
  AugmentPolicy pol;
  pol.p_brightness = 1.0;
  pol.brightness_range = {0.1, 0.1};
  const auto out = intensity_augment(p, pol, 5);
  for (const float v : out.channels[0].values()) CHECK(v == doctest::Approx(0.6f));
  CHECK(out.mask == p.mask);
}

TEST_CASE("contrast gain keeps the channel mean") {
  auto p = make_patch({6, 6, 6}, 2);
  // Stay clear of the [0, 1] clamp: gain 1.5 keeps [0.3, 0.7] inside it.
  for (auto& v : p.channels[0].values()) v = 0.3f + 0.4f * v;
  AugmentPolicy pol;
  pol.p_contrast = 1.0;
  pol.contrast_range = {1.5, 1.5};
  const auto out = intensity_augment(p, pol, 6);
  double a = 0, b = 0;
  for (std::int64_t i = 0; i < p.channels[0].size(); ++i) {
    a += p.channels[0][i];
    b += out.channels[0][i];
  }
  CHECK(a == doctest::Approx(b).epsilon(1e-4));
}

TEST_CASE("additive noise has the requested standard deviation") {
  PatchSample p;
  p.size = {32, 32, 32};
  p.channels = {Volume({32, 32, 32}, 0.5f)};
  p.mask = Mask({32, 32, 32});
  AugmentPolicy pol;
  pol.p_noise = 1.0;
  pol.noise_sigma_range = {0.05, 0.05};
  const auto out = intensity_augment(p, pol, 17);
  double s = 0, s2 = 0;
  const auto n = static_cast<double>(out.channels[0].size());
  for (const float v : out.channels[0].values()) {
    s += v - 0.5;
    s2 += (v - 0.5) * (v - 0.5);
  }
  const double mean = s / n;
  CHECK(std::abs(mean) < 0.002);
  CHECK(std::sqrt(s2 / n - mean * mean) == doctest::Approx(0.05).epsilon(0.03));
}

TEST_CASE("flipping twice along an axis is the identity") {
  const auto p = make_patch({5, 6, 7}, 3);
  for (int a = 0; a < 3; ++a) {
    SpatialTransform t;
    t.flip[static_cast<std::size_t>(a)] = true;
    const auto once = apply_spatial_transform(p, t);
    CHECK(once.channels != p.channels);
    const auto twice = apply_spatial_transform(once, t);
    CHECK(twice.channels == p.channels);
    CHECK(twice.mask == p.mask);
  }
}

TEST_CASE("a quarter turn permutes a bar exactly") {
  const std::int64_t n = 8;
  const auto p = bar_patch(n);
  AugmentPolicy pol;
  pol.p_rotate = 1.0;
  pol.rotation_deg = {Interval{90, 90}, Interval{0, 0}, Interval{0, 0}};
  const auto out = spatial_augment(p, pol, 9);
  // About the depth axis the bar swings from the width axis onto the height axis.
  for (std::int64_t z = 0; z < n; ++z)
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x) {
        const bool in = (z == n / 2 - 1 || z == n / 2) && (x == n / 2 - 1 || x == n / 2);
        CHECK(out.channels[0](z, y, x) == (in ? 1.0f : 0.0f));
        CHECK(out.mask(z, y, x) == (in ? 1 : 0));
      }
}

TEST_CASE("augmentation is reproducible for a fixed seed") {
  const auto p = make_patch({12, 12, 12}, 4);
  auto pol = AugmentPolicy::desk_defaults();
  pol.p_rotate = pol.p_elastic = pol.p_noise = 1.0;
  const auto a = augment(p, pol, 77);
  const auto b = augment(p, pol, 77);
  CHECK(a.channels == b.channels);
  CHECK(a.mask == b.mask);
  const auto c = augment(p, pol, 78);
  CHECK(a.channels != c.channels);
}

TEST_CASE("spatial augmentation keeps the mask binary and aligned with the image") {
  const auto p = bar_patch(10);
  auto pol = AugmentPolicy::desk_defaults();
  pol.p_rotate = pol.p_scale = pol.p_translate = pol.p_elastic = 1.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto out = spatial_augment(p, pol, s);
    CHECK(is_binary(out.mask));
    CHECK(out.mask.dims() == p.mask.dims());
    // The mask takes the nearest source voxel, whose trilinear weight is at
    // least 1/8, so a lesion voxel never lands on pure background.
    for (std::int64_t i = 0; i < out.mask.size(); ++i) {
      if (out.mask[i]) CHECK(out.channels[0][i] >= 0.125f - 1e-6f);
    }
  }
}

TEST_CASE("policy validation") {
  AugmentPolicy pol;
  CHECK_NOTHROW(pol.validate());
  pol.p_flip = 1.5;
  CHECK_THROWS_AS(pol.validate(), std::invalid_argument);
  pol.p_flip = 0.5;
  pol.scale_range = {1.2, 0.8};
  CHECK_THROWS_AS(pol.validate(), std::invalid_argument);
}
