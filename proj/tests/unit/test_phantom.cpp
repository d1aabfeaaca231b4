
#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "helpers.hpp"
#include "mpls/errors.hpp"
#include "mpls/lesions.hpp"
#include "mpls/manifest.hpp"
#include "mpls/phantom.hpp"

// libtorch defines its own CHECK macro; doctest's has to win.
#undef CHECK
#include <doctest.h>

using namespace mpls;

namespace {

PhantomSpec small_spec() {
  PhantomSpec s;
  s.dims = {40, 40, 40};
  s.diameter_min_mm = 6.0;
  s.diameter_max_mm = 10.0;
  return s;
}

double mean_over(const Volume& v, const Mask& m, bool inside) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < v.size(); ++i)
    if (static_cast<bool>(m[i]) == inside) {
      sum += v[i];
      ++n;
    }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("zero lesions give organ-only volumes") {
  auto s = small_spec();
  s.lesions_min = s.lesions_max = 0;
  const auto p = generate_case(s, 1);
  CHECK(p.lesions.empty());
  CHECK(count_nonzero(p.image.mask) == 0);
  CHECK(count_nonzero(p.image.organ) > 0);
  CHECK(p.image.phases.size() == 3);
}

TEST_CASE("a 20 mm lesion has the ellipsoid volume") {
  PhantomSpec s;
  s.lesions_min = s.lesions_max = 1;
  s.diameter_min_mm = s.diameter_max_mm = 20.0;
  const double expected = 4.0 / 3.0 * std::numbers::pi * 1000.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto p = generate_case(s, seed);
    const auto v = static_cast<double>(count_nonzero(p.image.mask));
    CHECK(std::abs(v - expected) / expected < 0.10);
  }
}

TEST_CASE("generation is deterministic in the seed") {
  const auto a = generate_case(small_spec(), 42, "x");
  const auto b = generate_case(small_spec(), 42, "x");
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.image.phases[i].voxels == b.image.phases[i].voxels);
  CHECK(a.image.mask == b.image.mask);
  const auto c = generate_case(small_spec(), 43, "x");
  CHECK(a.image.phases[0].voxels != c.image.phases[0].voxels);
}

TEST_CASE("lesions lie inside the organ and stay apart") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = generate_case(small_spec(), seed);
    CHECK_NOTHROW(p.image.validate());
    for (std::int64_t i = 0; i < p.image.mask.size(); ++i)
      if (p.image.mask[i]) REQUIRE(p.image.organ[i] == 1);
    CHECK(extract_lesions(p.image.mask).size() == p.lesions.size());
  }
}

TEST_CASE("intensities are integer HU") {
  const auto p = generate_case(small_spec(), 3);
  for (const auto& pv : p.image.phases)
    for (const float v : pv.voxels.values()) CHECK(v == std::round(v));
}

TEST_CASE("hyperenhancing lesions contrast more in the arterial phase") {
  auto s = small_spec();
  s.lesions_min = s.lesions_max = 1;
  s.diameter_min_mm = s.diameter_max_mm = 12.0;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 40 && checked < 3; ++seed) {
    const auto p = generate_case(s, seed);
    if (p.lesions[0].profile != LesionProfile::Hyperenhancing) continue;
    ++checked;
    // Organ reference: organ voxels outside the lesion.
    Mask organ_only = p.image.organ;
    for (std::int64_t i = 0; i < organ_only.size(); ++i) organ_only[i] = organ_only[i] && !p.image.mask[i];
    auto contrast = [&](Phase ph) {
      const auto& v = p.image.phase(ph).voxels;
      return mean_over(v, p.image.mask, true) - mean_over(v, organ_only, true);
    };
    const double art = contrast(Phase::Arterial), ven = contrast(Phase::Venous);
    CHECK(art > 0.0);
    CHECK(std::abs(art) >= std::abs(ven));
  }
  CHECK(checked == 3);
}

TEST_CASE("infeasible placement reports its constraints") {
  auto s = small_spec();
  s.lesions_min = s.lesions_max = 3;
  s.diameter_min_mm = s.diameter_max_mm = 30.0;
  s.max_retries = 20;
  try {
    generate_case(s, 1);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("diameter") != std::string::npos);
    CHECK(msg.find("20") != std::string::npos);
  }
}

TEST_CASE("PhantomSpec validation") {
  auto s = small_spec();
  s.diameter_min_mm = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.lesions_min = 4;
  s.lesions_max = 2;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("datasets hold unique seeds and load through the manifest") {
  const auto dir = testing::temp_dir("phantom_ds");
  auto s = small_spec();
  s.dims = {24, 24, 24};
  s.diameter_min_mm = 3.0;
  s.diameter_max_mm = 5.0;
  const auto ds = generate_dataset(s, 8, 4, 7, dir, true);
  CHECK(std::set<std::uint64_t>(ds.seeds.begin(), ds.seeds.end()).size() == 12);
  CHECK(ds.cases.size() == 12);
  const auto train = load_manifest(ds.train_manifest);
  const auto test = load_manifest(ds.test_manifest);
  CHECK(train.cases.size() == 8);
  CHECK(test.cases.size() == 4);
  CHECK(test.cases[0].subject_id == "test_000");
  const auto loaded = load_case(train, train.cases[2]);
  CHECK(loaded.mask == ds.cases[2].image.mask);
  CHECK(loaded.phase(Phase::Delay).voxels == ds.cases[2].image.phase(Phase::Delay).voxels);
  CHECK_THROWS_AS(generate_dataset(s, 0, 1, 7, dir), ConfigError);
}

TEST_CASE("lesion diameters follow the configured uniform range") {
  auto s = small_spec();
  s.dims = {48, 48, 48};
  s.diameter_min_mm = 4.0;
  s.diameter_max_mm = 12.0;
  std::vector<double> d;
  for (std::uint64_t seed = 0; seed < 60; ++seed)
    for (const auto& l : generate_case(s, derive_seed(99, seed)).lesions) d.push_back(l.diameter_mm);
  std::sort(d.begin(), d.end());
  const double n = static_cast<double>(d.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double cdf = (d[i] - s.diameter_min_mm) / (s.diameter_max_mm - s.diameter_min_mm);
    ks = std::max({ks, (static_cast<double>(i) + 1) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  CHECK(d.front() >= s.diameter_min_mm);
  CHECK(d.back() <= s.diameter_max_mm);
  CHECK(ks < 1.63 / std::sqrt(n));  // alpha = 0.01
}
