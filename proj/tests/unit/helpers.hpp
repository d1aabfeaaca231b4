#pragma once

#include <filesystem>
#include <string>

#include "mpls/random.hpp"
#include "mpls/volume.hpp"

namespace testing {

inline mpls::Mask random_mask(const mpls::Dims3& d, double p, std::uint64_t seed) {
  mpls::Rng rng(seed);
  mpls::Mask m(d);
  for (auto& v : m.values()) v = mpls::bernoulli(rng, p) ? 1 : 0;
  return m;
}

inline mpls::Volume random_volume(const mpls::Dims3& d, std::uint64_t seed) {
  mpls::Rng rng(seed);
  mpls::Volume v(d);
  for (auto& x : v.values()) x = static_cast<float>(mpls::uniform01(rng));
  return v;
}

// Box [lo, lo + size) set to 1.
inline void fill_box(mpls::Mask& m, const mpls::Index3& lo, const mpls::Dims3& size) {
  for (std::int64_t z = lo[0]; z < lo[0] + size[0]; ++z)
    for (std::int64_t y = lo[1]; y < lo[1] + size[1]; ++y)
      for (std::int64_t x = lo[2]; x < lo[2] + size[2]; ++x) m(z, y, x) = 1;
}

inline mpls::MultiPhaseCase make_case(const mpls::Dims3& d, std::uint64_t seed, const std::string& id = "s0") {
  mpls::MultiPhaseCase c;
  c.subject_id = id;
  for (const auto p : mpls::kPhaseOrder) {
    mpls::PhaseVolume pv;
    pv.phase = p;
    pv.voxels = random_volume(d, seed + static_cast<std::uint64_t>(p));
    c.phases.push_back(pv);
  }
  c.mask = mpls::Mask(d);
  return c;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mpls_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
