#include <torch/torch.h>

#include <algorithm>
#include <map>
#include <set>

#include "helpers.hpp"
#include "mpls/fusion.hpp"
#include "mpls/lesions.hpp"
#include "mpls/patch.hpp"

// libtorch defines its own CHECK macro; doctest's has to win.
#undef CHECK
#include <doctest.h>

using namespace mpls;

namespace {

using Shape = std::vector<std::int64_t>;

FusionConfig small_fusion(int depth = 2) {
  FusionConfig f;
  f.base.depth = depth;
  f.base.block.base_width = 4;
  f.base.blocks_per_level = 1;
  return f;
}

// Component labels by repeated label propagation, a deliberately different
// algorithm from the flood fill under test.
std::vector<std::set<std::int64_t>> brute_components(const Mask& m, int conn) {
  const auto& d = m.dims();
  std::vector<std::int64_t> label(static_cast<std::size_t>(m.size()), -1);
  for (std::int64_t i = 0; i < m.size(); ++i)
    if (m[i]) label[i] = i;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::int64_t z = 0; z < d[0]; ++z)
      for (std::int64_t y = 0; y < d[1]; ++y)
        for (std::int64_t x = 0; x < d[2]; ++x) {
          const auto i = m.offset(z, y, x);
          if (label[i] < 0) continue;
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int n = std::abs(dz) + std::abs(dy) + std::abs(dx);
                if (n == 0 || (conn == 6 && n > 1) || !m.contains(z + dz, y + dy, x + dx)) continue;
                const auto j = m.offset(z + dz, y + dy, x + dx);
                if (label[j] >= 0 && label[j] < label[i]) {
                  label[i] = label[j];
                  changed = true;
                }
              }
        }
  }
  std::map<std::int64_t, std::set<std::int64_t>> groups;
  for (std::int64_t i = 0; i < m.size(); ++i)
    if (label[i] >= 0) groups[label[i]].insert(i);
  std::vector<std::set<std::int64_t>> out;
  for (auto& [_, g] : groups) out.push_back(g);
  return out;
}

std::set<std::int64_t> as_set(const LesionInstance& l, const Mask& m) {
  std::set<std::int64_t> s;
  for (const auto& v : l.voxels) s.insert(m.offset(v[0], v[1], v[2]));
  return s;
}

}  // namespace

TEST_CASE("fusion input carries the mean probability") {
  const auto v = testing::random_volume({4, 5, 6}, 1);
  const auto a = testing::random_volume({4, 5, 6}, 2), b = testing::random_volume({4, 5, 6}, 3);
  const auto same = form_fusion_input(v, a, a);
  CHECK(same.probability == a);
  CHECK(same.image == v);
  const auto half = form_fusion_input(v, Volume({4, 5, 6}, 0.0f), Volume({4, 5, 6}, 1.0f));
  for (const float x : half.probability.values()) CHECK(x == 0.5f);
  const auto mixed = form_fusion_input(v, a, b);
  for (std::int64_t i = 0; i < v.size(); ++i) {
    CHECK(mixed.probability[i] == (a[i] + b[i]) / 2.0f);
    CHECK(mixed.probability[i] >= 0.0f);
    CHECK(mixed.probability[i] <= 1.0f);
  }
  CHECK_THROWS_AS(form_fusion_input(v, a, Volume({4, 5, 7})), std::invalid_argument);
}

TEST_CASE("fusion network output shape") {
  torch::NoGradGuard ng;
  FusionNet f(small_fusion(4));
  f->eval();
  std::vector<torch::Tensor> in{torch::rand({1, 2, 32, 32, 32}), torch::rand({1, 2, 32, 32, 32}),
                                torch::rand({1, 2, 32, 32, 32})};
  const auto out = f->forward(in);
  CHECK(out.main.sizes() == Shape{1, 2, 32, 32, 32});
  CHECK(out.aux.size() == 3);
  CHECK_THROWS_AS(f->forward({in[0], in[1]}), std::invalid_argument);
}

TEST_CASE("fusion network accepts 128 cubed branches") {
  torch::NoGradGuard ng;
  FusionNet f(small_fusion(4));
  f->eval();
  std::vector<torch::Tensor> in(3, torch::rand({1, 2, 128, 128, 128}));
  CHECK(f->forward(in).main.sizes() == Shape{1, 2, 128, 128, 128});
}

TEST_CASE("fusion branches are not interchangeable") {
  torch::NoGradGuard ng;
  torch::manual_seed(3);
  FusionNet f(small_fusion());
  f->eval();
  const auto a = torch::rand({1, 2, 16, 16, 16}), b = torch::rand({1, 2, 16, 16, 16}),
             c = torch::rand({1, 2, 16, 16, 16});
  const auto x = f->forward({a, b, c}).main;
  const auto y = f->forward({b, a, c}).main;
  CHECK((x - y).abs().max().item<float>() > 1e-5f);
}

TEST_CASE("fusion logits are finite and periodic on constant images with zero probabilities") {
  torch::NoGradGuard ng;
  FusionNet f(small_fusion());
  f->eval();
  auto branch = torch::zeros({1, 2, 48, 48, 48});
  branch.select(1, 0).fill_(0.6);
  const auto out = f->forward({branch, branch, branch}).main[0][1];
  CHECK(torch::isfinite(out).all().item<bool>());
  const auto interior = out.slice(0, 16, 32).slice(1, 16, 32).slice(2, 16, 32);
  const auto cell = interior.slice(0, 0, 4).slice(1, 0, 4).slice(2, 0, 4).repeat({4, 4, 4});
  CHECK((interior - cell).abs().max().item<float>() < 1e-4f);
}

TEST_CASE("lesion extraction") {
  CHECK(extract_lesions(Mask({4, 4, 4})).empty());

  Mask two({10, 10, 10});
  testing::fill_box(two, {1, 1, 1}, {2, 2, 2});
  testing::fill_box(two, {5, 4, 3}, {3, 3, 4});
  const auto l = extract_lesions(two, Connectivity::TwentySix, {1, 1, 2});
  REQUIRE(l.size() == 2);
  CHECK(l[0].size() == 36);
  CHECK(l[0].bbox_min == Index3{5, 4, 3});
  CHECK(l[0].bbox_max == Index3{7, 6, 6});
  CHECK(l[1].bbox_min == Index3{1, 1, 1});
  CHECK(l[1].bbox_max == Index3{2, 2, 2});
  CHECK(l[0].volume_mm3 == 72.0);
  CHECK(l[0].centroid_mm[0] == doctest::Approx(6.0));
  CHECK(l[0].centroid_mm[2] == doctest::Approx(2.0 * 4.5));

  Mask diag({3, 3, 3});
  diag(0, 0, 0) = 1;
  diag(1, 1, 1) = 1;
  CHECK(extract_lesions(diag, Connectivity::TwentySix).size() == 1);
  CHECK(extract_lesions(diag, Connectivity::Six).size() == 2);
}

TEST_CASE("components agree with label propagation and partition the mask") {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto m = testing::random_mask({9, 10, 11}, 0.15, s);
    for (const auto conn : {Connectivity::Six, Connectivity::TwentySix}) {
      const auto lesions = extract_lesions(m, conn);
      auto expected = brute_components(m, static_cast<int>(conn));
      std::vector<std::set<std::int64_t>> got;
      for (std::size_t i = 0; i < lesions.size(); ++i) {
        got.push_back(as_set(lesions[i], m));
        if (i > 0) CHECK(lesions[i].size() <= lesions[i - 1].size());
      }
      std::sort(expected.begin(), expected.end());
      std::sort(got.begin(), got.end());
      CHECK(got == expected);
      CHECK(lesion_union(lesions, m.dims()) == m);
    }
  }
}

TEST_CASE("crop margins") {
  Mask m({40, 40, 40});
  testing::fill_box(m, {10, 10, 10}, {10, 5, 1});
  const auto l = extract_lesions(m)[0];
  const auto box = crop_with_margin(l, m.dims(), 0.2);
  CHECK(box.size() == Dims3{12, 6, 1});
  CHECK(box.lo == Index3{9, 10, 10});
  const auto tight = crop_with_margin(l, m.dims(), 0.0);
  CHECK(tight.lo == l.bbox_min);
  CHECK(tight.size() == l.span());
  const auto padded = crop_with_margin(l, m.dims(), 0.2, 8, 16);
  CHECK(padded.input_size == Dims3{16, 16, 16});
  CHECK(padded.input_origin[0] == 9 - 2);
  CHECK_THROWS_AS(crop_with_margin(l, m.dims(), -0.1), std::invalid_argument);

  Mask corner({20, 20, 20});
  testing::fill_box(corner, {0, 0, 0}, {10, 10, 10});
  const auto c = crop_with_margin(extract_lesions(corner)[0], corner.dims(), 0.2, 8, 1);
  CHECK(c.lo == Index3{0, 0, 0});
  CHECK(c.hi == Index3{11, 11, 11});
  CHECK(c.input_size == Dims3{16, 16, 16});
}

namespace {

MultiPhaseCase refine_case(const Dims3& d) { return testing::make_case(d, 21); }

Volume two_lesion_map(const Dims3& d) {
  Volume x(d, 0.1f);
  for (std::int64_t z = 3; z < 8; ++z)
    for (std::int64_t y = 3; y < 9; ++y)
      for (std::int64_t x0 = 3; x0 < 7; ++x0) x(z, y, x0) = 0.9f;
  for (std::int64_t z = 20; z < 24; ++z)
    for (std::int64_t y = 18; y < 22; ++y)
      for (std::int64_t x0 = 20; x0 < 23; ++x0) x(z, y, x0) = 0.8f;
  return x;
}

const Refiner kShrink = [](const std::vector<Volume>& image, const Volume& current) {
  Volume out = current;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = 0.5f * current[i] + 0.25f * image[0][i];
  return out;
};

}  // namespace

TEST_CASE("refinement without lesions returns the map unchanged") {
  const Dims3 d{16, 16, 16};
  const Volume x(d, 0.2f);
  const auto r = refine_lesions(x, refine_case(d), kShrink);
  CHECK(r.probabilities == x);
  CHECK(r.boxes.empty());
}

TEST_CASE("an identity refiner leaves the map unchanged") {
  const Dims3 d{32, 32, 32};
  const auto x = two_lesion_map(d);
  const Refiner identity = [](const std::vector<Volume>&, const Volume& current) { return current; };
  const auto r = refine_lesions(x, refine_case(d), identity);
  CHECK(r.boxes.size() == 2);
  CHECK(r.probabilities == x);
}

TEST_CASE("refinement is local to the expanded boxes") {
  const Dims3 d{32, 32, 32};
  const auto x = two_lesion_map(d);
  const auto r = refine_lesions(x, refine_case(d), kShrink);
  REQUIRE(r.boxes.size() == 2);
  std::int64_t changed_inside = 0;
  for (std::int64_t z = 0; z < 32; ++z)
    for (std::int64_t y = 0; y < 32; ++y)
      for (std::int64_t x0 = 0; x0 < 32; ++x0) {
        const bool inside = r.boxes[0].contains(z, y, x0) || r.boxes[1].contains(z, y, x0);
        if (!inside) CHECK(r.probabilities(z, y, x0) == x(z, y, x0));
        else changed_inside += r.probabilities(z, y, x0) != x(z, y, x0);
      }
  CHECK(changed_inside > 0);
}

TEST_CASE("disjoint lesion updates commute") {
  const Dims3 d{32, 32, 32};
  const auto x = two_lesion_map(d);
  const auto c = refine_case(d);
  const auto r = refine_lesions(x, c, kShrink);

  // Replay the per-lesion writes in reverse order.
  auto lesions = extract_lesions(threshold(x, 0.5f));
  std::reverse(lesions.begin(), lesions.end());
  Volume replay = x;
  const RefineOptions opts;
  for (const auto& l : lesions) {
    const auto box = crop_with_margin(l, d, opts.margin, opts.divisor, opts.min_size);
    std::vector<Volume> img;
    for (const auto& pv : c.phases) img.push_back(crop(pv.voxels, box.input_origin, box.input_size));
    const auto out = kShrink(img, crop(x, box.input_origin, box.input_size));
    for (std::int64_t z = box.lo[0]; z < box.hi[0]; ++z)
      for (std::int64_t y = box.lo[1]; y < box.hi[1]; ++y)
        for (std::int64_t x0 = box.lo[2]; x0 < box.hi[2]; ++x0)
          replay(z, y, x0) = out(z - box.input_origin[0], y - box.input_origin[1], x0 - box.input_origin[2]);
  }
  CHECK(replay == r.probabilities);
}

TEST_CASE("single-voxel lesions pass through with a warning") {
  const Dims3 d{16, 16, 16};
  Volume x(d, 0.0f);
  x(8, 8, 8) = 0.9f;
  const auto r = refine_lesions(x, refine_case(d), kShrink);
  CHECK(r.probabilities == x);
  CHECK(r.warnings.size() == 1);
}

TEST_CASE("a refiner returning the wrong size is rejected") {
  const Dims3 d{32, 32, 32};
  const Refiner bad = [](const std::vector<Volume>&, const Volume&) { return Volume({3, 3, 3}); };
  CHECK_THROWS_AS(refine_lesions(two_lesion_map(d), refine_case(d), bad), std::runtime_error);
}
