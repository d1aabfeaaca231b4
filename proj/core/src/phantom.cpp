#include "mpls/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mpls/errors.hpp"
#include "mpls/preprocess.hpp"
#include "mpls/random.hpp"

namespace mpls {

const std::array<double, 3>& ProfileOffsets::of(LesionProfile p) const {
  switch (p) {
    case LesionProfile::Hyperenhancing: return hyperenhancing;
    case LesionProfile::Hypoenhancing: return hypoenhancing;
    case LesionProfile::Retention: return retention;
  }
  throw std::invalid_argument("unknown lesion profile");
}

void PhantomSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 8) throw ConfigError("phantom: every dimension must be >= 8");
    if (!(spacing[a] > 0.0)) throw ConfigError("phantom: spacing must be positive");
    if (!(organ_radii[a] > 0.0 && organ_radii[a] <= 0.5)) throw ConfigError("phantom: organ radii must lie in (0, 0.5]");
  }
  if (lesions_min < 0 || lesions_max < lesions_min) throw ConfigError("phantom: bad lesion count range");
  if (diameter_min_mm < 2.0 || diameter_max_mm < diameter_min_mm) {
    throw ConfigError("phantom: lesion diameters must satisfy 2 <= min <= max");
  }
  if (axis_ratio_max < 1.0) throw ConfigError("phantom: axis_ratio_max must be >= 1");
  if (noise_sigma_hu < 0.0 || texture_hu < 0.0 || edge_softness_mm < 0.0) {
    throw ConfigError("phantom: noise, texture and edge softness must be >= 0");
  }
  if (max_retries < 1) throw ConfigError("phantom: max_retries must be >= 1");
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Uniform random rotation from a unit quaternion.
Mat3 random_rotation(Rng& rng) {
  double q[4];
  double n = 0.0;
  do {
    n = 0.0;
    for (double& v : q) {
      v = standard_normal(rng);
      n += v * v;
    }
  } while (n < 1e-12);
  n = std::sqrt(n);
  for (double& v : q) v /= n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
           {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
           {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

struct Ellipsoid {
  Vec3 centre;  // voxels
  Vec3 radii;   // mm
  Mat3 rot;

  // Normalised radius; <= 1 inside.
  double level(const Vec3& p_mm) const {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      double u = 0.0;
      for (int j = 0; j < 3; ++j) u += rot[j][i] * p_mm[j];
      s += (u / radii[i]) * (u / radii[i]);
    }
    return std::sqrt(s);
  }
};

}  // namespace

Phantom generate_case(const PhantomSpec& spec, std::uint64_t seed, const std::string& subject_id) {
  spec.validate();
  Rng rng(seed);
  const auto& d = spec.dims;
  const auto& sp = spec.spacing;

  Phantom out;
  auto& img = out.image;
  img.subject_id = subject_id;
  img.mask = Mask(d);
  img.organ = Mask(d);

  Vec3 organ_c, organ_r;
  for (int a = 0; a < 3; ++a) {
    organ_c[a] = (static_cast<double>(d[a]) - 1.0) / 2.0 + uniform(rng, -spec.organ_jitter, spec.organ_jitter);
    organ_r[a] = spec.organ_radii[a] * static_cast<double>(d[a]);
  }
  auto organ_level = [&](double z, double y, double x) {
    const double u = (z - organ_c[0]) / organ_r[0], v = (y - organ_c[1]) / organ_r[1],
                 w = (x - organ_c[2]) / organ_r[2];
    return std::sqrt(u * u + v * v + w * w);
  };
  for (std::int64_t z = 0; z < d[0]; ++z)
    for (std::int64_t y = 0; y < d[1]; ++y)
      for (std::int64_t x = 0; x < d[2]; ++x)
        img.organ(z, y, x) = organ_level(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)) <= 1.0;

  // Lesion placement: voxelise each candidate and accept it when every voxel
  // is inside the organ and at least two voxels from earlier lesions.
  const auto n_lesions =
      spec.lesions_min + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.lesions_max - spec.lesions_min + 1)));
  Grid3<std::int16_t> owner(d, -1);
  std::vector<Ellipsoid> ellipsoids;
  for (int l = 0; l < n_lesions; ++l) {
    const double diameter = uniform(rng, spec.diameter_min_mm, spec.diameter_max_mm);
    const auto profile = kLesionProfiles[uniform_index(rng, kLesionProfiles.size())];
    const double ra = std::exp(uniform(rng, -1.0, 1.0) * std::log(spec.axis_ratio_max));
    const double rb = std::exp(uniform(rng, -1.0, 1.0) * std::log(spec.axis_ratio_max));
    const double r = diameter / 2.0;
    Ellipsoid e{{0, 0, 0}, {r * ra, r * rb, r / (ra * rb)}, random_rotation(rng)};
    const double reach = std::max({e.radii[0], e.radii[1], e.radii[2]});

    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      for (int a = 0; a < 3; ++a) e.centre[a] = uniform(rng, 0.0, static_cast<double>(d[a] - 1));
      Index3 lo, hi;
      for (int a = 0; a < 3; ++a) {
        lo[a] = static_cast<std::int64_t>(std::floor(e.centre[a] - reach / sp[a])) - 1;
        hi[a] = static_cast<std::int64_t>(std::ceil(e.centre[a] + reach / sp[a])) + 1;
      }
      std::vector<Index3> vox;
      bool ok = true;
      for (std::int64_t z = lo[0]; z <= hi[0] && ok; ++z)
        for (std::int64_t y = lo[1]; y <= hi[1] && ok; ++y)
          for (std::int64_t x = lo[2]; x <= hi[2] && ok; ++x) {
            const Vec3 p{(static_cast<double>(z) - e.centre[0]) * sp[0], (static_cast<double>(y) - e.centre[1]) * sp[1],
                         (static_cast<double>(x) - e.centre[2]) * sp[2]};
            if (e.level(p) > 1.0) continue;
            if (!img.organ.contains(z, y, x) || !img.organ(z, y, x)) {
              ok = false;
              break;
            }
            for (std::int64_t dz = -2; dz <= 2 && ok; ++dz)
              for (std::int64_t dy = -2; dy <= 2 && ok; ++dy)
                for (std::int64_t dx = -2; dx <= 2 && ok; ++dx)
                  if (owner.contains(z + dz, y + dy, x + dx) && owner(z + dz, y + dy, x + dx) >= 0) ok = false;
            vox.push_back({z, y, x});
          }
      if (!ok || vox.empty()) continue;
      for (const auto& v : vox) {
        owner(v[0], v[1], v[2]) = static_cast<std::int16_t>(l);
        img.mask(v[0], v[1], v[2]) = 1;
      }
      placed = true;
    }
    if (!placed) {
      std::ostringstream msg;
      msg << "phantom: could not place lesion " << l + 1 << " of " << n_lesions << " (diameter " << diameter
          << " mm) after " << spec.max_retries
          << " attempts; constraints: fully inside the organ, >= 2 voxels from other lesions";
      throw ConfigError(msg.str());
    }
    ellipsoids.push_back(e);
    out.lesions.push_back({e.centre, diameter, profile});
  }

  // Soft lesion weights for a smooth intensity edge; the mask stays the
  // exact voxelisation.
  std::vector<Volume> soft;
  const Vec3 edge_sigma{spec.edge_softness_mm / sp[0], spec.edge_softness_mm / sp[1], spec.edge_softness_mm / sp[2]};
  for (std::size_t l = 0; l < ellipsoids.size(); ++l) {
    Volume w(d);
    for (std::int64_t i = 0; i < owner.size(); ++i) w[i] = owner[i] == static_cast<std::int16_t>(l) ? 1.0f : 0.0f;
    soft.push_back(spec.edge_softness_mm > 0.0 ? gaussian_smooth(w, edge_sigma) : w);
  }

  Volume organ_soft(d);
  for (std::int64_t i = 0; i < organ_soft.size(); ++i) organ_soft[i] = img.organ[i] ? 1.0f : 0.0f;
  if (spec.edge_softness_mm > 0.0) organ_soft = gaussian_smooth(organ_soft, edge_sigma);

  // Texture: smoothed noise shared by all phases (the same tissue).
  Volume texture(d);
  for (auto& v : texture.values()) v = static_cast<float>(standard_normal(rng));
  const Vec3 tex_sigma{spec.texture_scale_mm / sp[0], spec.texture_scale_mm / sp[1], spec.texture_scale_mm / sp[2]};
  texture = gaussian_smooth(texture, tex_sigma);
  double tex_sd = 0.0;
  for (const float v : texture.values()) tex_sd += static_cast<double>(v) * v;
  tex_sd = std::sqrt(tex_sd / static_cast<double>(texture.size()));
  const double tex_gain = tex_sd > 0.0 ? spec.texture_hu / tex_sd : 0.0;

  for (std::size_t pi = 0; pi < kPhaseOrder.size(); ++pi) {
    PhaseVolume pv;
    pv.phase = kPhaseOrder[pi];
    pv.spacing = sp;
    pv.voxels = Volume(d);
    for (std::int64_t i = 0; i < pv.voxels.size(); ++i) {
      const double o = organ_soft[i];
      double hu = spec.background_hu + o * (spec.organ_hu[pi] - spec.background_hu);
      for (std::size_t l = 0; l < soft.size(); ++l) hu += soft[l][i] * spec.offsets.of(out.lesions[l].profile)[pi];
      hu += o * tex_gain * texture[i];
      hu += spec.noise_sigma_hu * standard_normal(rng);
      pv.voxels[i] = static_cast<float>(std::clamp(std::round(hu), -1024.0, 3071.0));
    }
    img.phases.push_back(std::move(pv));
  }
  img.validate();
  return out;
}

PhantomDataset generate_dataset(const PhantomSpec& spec, int n_train, int n_test, std::uint64_t seed,
                                const std::filesystem::path& out_dir, bool keep_cases) {
  if (n_train < 1 || n_test < 1) throw ConfigError("phantom dataset: n_train and n_test must be >= 1");
  spec.validate();
  PhantomDataset ds;
  CaseManifest train, test;
  std::set<std::uint64_t> used;
  std::uint64_t stream = 0;
  for (int i = 0; i < n_train + n_test; ++i) {
    std::uint64_t s = derive_seed(seed, stream++);
    while (!used.insert(s).second) s = derive_seed(seed, stream++);
    ds.seeds.push_back(s);
    std::ostringstream id;
    id << (i < n_train ? "train_" : "test_") << std::setw(3) << std::setfill('0') << (i < n_train ? i : i - n_train);
    auto ph = generate_case(spec, s, id.str());
    std::ostringstream desc;
    desc << "mpls phantom seed=" << s;
    const auto entry = save_case(ph.image, out_dir, desc.str());
    (i < n_train ? train : test).cases.push_back(entry);
    if (keep_cases) ds.cases.push_back(std::move(ph));
  }
  ds.train_manifest = out_dir / "train.json";
  ds.test_manifest = out_dir / "test.json";
  save_manifest(ds.train_manifest, train);
  save_manifest(ds.test_manifest, test);
  return ds;
}

}  // namespace mpls
