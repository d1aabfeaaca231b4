
#include <cmath>
#include <limits>
#include <sstream>

#include "helpers.hpp"
#include "mpls/metrics.hpp"

// libtorch defines its own CHECK macro; doctest's has to win.
#undef CHECK
#include <doctest.h>

using namespace mpls;

namespace {

struct Surfel {
  Vec3 centre;
  double area;
};

// Every foreground/background face as a centre point in mm, listed by brute force.
std::vector<Surfel> surfels(const Mask& m, const Vec3& sp) {
  std::vector<Surfel> out;
  const auto& d = m.dims();
  auto fg = [&](std::int64_t z, std::int64_t y, std::int64_t x) { return m.contains(z, y, x) && m(z, y, x); };
  for (std::int64_t z = -1; z <= d[0]; ++z)
    for (std::int64_t y = -1; y <= d[1]; ++y)
      for (std::int64_t x = -1; x <= d[2]; ++x) {
        const Vec3 c{(z + 0.5) * sp[0], (y + 0.5) * sp[1], (x + 0.5) * sp[2]};
        if (fg(z, y, x) != fg(z + 1, y, x)) out.push_back({{(z + 1.0) * sp[0], c[1], c[2]}, sp[1] * sp[2]});
        if (fg(z, y, x) != fg(z, y + 1, x)) out.push_back({{c[0], (y + 1.0) * sp[1], c[2]}, sp[0] * sp[2]});
        if (fg(z, y, x) != fg(z, y, x + 1)) out.push_back({{c[0], c[1], (x + 1.0) * sp[2]}, sp[0] * sp[1]});
      }
  return out;
}

double surface_dice_oracle(const Mask& a, const Mask& b, const Vec3& sp, double tol) {
  const auto sa = surfels(a, sp), sb = surfels(b, sp);
  if (sa.empty() && sb.empty()) return 1.0;
  if (sa.empty() || sb.empty()) return 0.0;
  auto within = [&](const std::vector<Surfel>& from, const std::vector<Surfel>& to) {
    double area = 0.0;
    for (const auto& s : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& t : to) {
        const double dz = s.centre[0] - t.centre[0], dy = s.centre[1] - t.centre[1], dx = s.centre[2] - t.centre[2];
        best = std::min(best, dz * dz + dy * dy + dx * dx);
      }
      if (std::sqrt(best) <= tol + 1e-9) area += s.area;
    }
    return area;
  };
  double total = 0.0;
  for (const auto& s : sa) total += s.area;
  for (const auto& s : sb) total += s.area;
  return (within(sa, sb) + within(sb, sa)) / total;
}

Confusion brute_confusion(const Mask& p, const Mask& g) {
  Confusion c;
  for (std::int64_t i = 0; i < p.size(); ++i) {
    if (p[i] && g[i]) ++c.tp;
    else if (p[i]) ++c.fp;
    else if (g[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Mask shifted(const Mask& m, const Index3& by) {
  Mask out(m.dims());
  for (std::int64_t z = 0; z < m.dims()[0]; ++z)
    for (std::int64_t y = 0; y < m.dims()[1]; ++y)
      for (std::int64_t x = 0; x < m.dims()[2]; ++x)
        if (m(z, y, x) && out.contains(z + by[0], y + by[1], x + by[2])) out(z + by[0], y + by[1], x + by[2]) = 1;
  return out;
}

}  // namespace

TEST_CASE("confusion counts match a voxel scan") {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto p = testing::random_mask({7, 8, 9}, 0.3, s);
    const auto g = testing::random_mask({7, 8, 9}, 0.4, s + 100);
    const auto c = confusion(p, g), b = brute_confusion(p, g);
    CHECK(c.tp == b.tp);
    CHECK(c.fp == b.fp);
    CHECK(c.fn == b.fn);
    CHECK(c.tn == b.tn);
    // Dice and IoU are tied by D = 2I / (1 + I).
    CHECK(c.dice() == doctest::Approx(2 * c.iou() / (1 + c.iou())).epsilon(1e-12));
    CHECK(c.iou() <= c.dice());
  }
  CHECK_THROWS_AS(confusion(Mask({2, 2, 2}), Mask({2, 2, 3})), std::invalid_argument);
}

TEST_CASE("global Dice pools counts") {
  Mask g({1, 1, 10});
  g.fill(1);
  const Mask miss({1, 1, 10});
  std::vector<Confusion> cs{confusion(g, g), confusion(miss, g)};
  CHECK(global_dice(cs) == doctest::Approx(2.0 / 3.0));
  const std::vector<Confusion> perfect{confusion(g, g), confusion(g, g)};
  CHECK(global_dice(perfect) == 1.0);
  const auto p = testing::random_mask({5, 5, 5}, 0.3, 1), q = testing::random_mask({5, 5, 5}, 0.3, 2);
  const std::vector<Confusion> one{confusion(p, q)};
  CHECK(global_dice(one) == confusion(p, q).dice());

  // Pooled formula recomputed from a brute-force counter.
  std::vector<Confusion> many;
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto a = testing::random_mask({6, 6, 6}, 0.1 * static_cast<double>(s + 1), s);
    const auto b = testing::random_mask({6, 6, 6}, 0.2, s + 50);
    many.push_back(confusion(a, b));
    const auto c = brute_confusion(a, b);
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  CHECK(global_dice(many) == 2.0 * tp / (2.0 * tp + fp + fn));
}

TEST_CASE("subject scores for a superset prediction") {
  Mask g({4, 4, 4}), p({4, 4, 4});
  testing::fill_box(g, {0, 0, 0}, {2, 2, 2});
  testing::fill_box(p, {0, 0, 0}, {2, 2, 4});
  const auto s = subject_scores("x", p, g, {1, 1, 1});
  CHECK(s.recall == 1.0);
  CHECK(s.precision == 0.5);
  CHECK(s.dice == doctest::Approx(2.0 / 3.0));
  CHECK(s.iou == 0.5);
  const auto same = subject_scores("y", g, g, {1, 1, 1});
  CHECK(same.dice == 1.0);
  CHECK(same.surface_dice == 1.0);
  const Mask empty({4, 4, 4});
  const auto e = subject_scores("z", empty, empty, {1, 1, 1});
  CHECK(e.dice == 1.0);
  CHECK(e.iou == 1.0);
  CHECK(e.recall == 1.0);
  CHECK(e.precision == 1.0);
  CHECK(e.surface_dice == 1.0);
  const auto miss = subject_scores("w", empty, g, {1, 1, 1});
  CHECK(miss.dice == 0.0);
  CHECK(miss.precision == 0.0);
  CHECK(miss.surface_dice == 0.0);
}

TEST_CASE("surface Dice conventions") {
  Mask cube({12, 12, 12});
  testing::fill_box(cube, {3, 3, 3}, {6, 6, 6});
  CHECK(surface_dice(cube, cube, {1, 1, 1}) == 1.0);
  CHECK(surface_dice(shifted(cube, {0, 0, 1}), cube, {1, 1, 1}, 1.5) == 1.0);
  CHECK(surface_dice(shifted(cube, {0, 0, 3}), cube, {1, 1, 1}, 1.5) < 1.0);
  CHECK(surface_dice(Mask({3, 3, 3}), Mask({3, 3, 3}), {1, 1, 1}) == 1.0);
  CHECK_THROWS_AS(surface_dice(cube, cube, {1, 1, 1}, -1.0), std::invalid_argument);
}

TEST_CASE("surface Dice equals the pairwise boundary oracle") {
  const Dims3 d{10, 11, 12};
  for (std::uint64_t s = 0; s < 3; ++s) {
    Mask a(d), b(d);
    testing::fill_box(a, {2, 2, 2}, {5, 6, 4});
    testing::fill_box(b, {3, 1, 3 + static_cast<std::int64_t>(s)}, {4, 6, 5});
    const auto noise = testing::random_mask(d, 0.05, s);
    for (std::int64_t i = 0; i < a.size(); ++i) b[i] = static_cast<std::uint8_t>(b[i] | noise[i]);
    for (const Vec3 sp : {Vec3{1, 1, 1}, Vec3{0.7, 1.3, 2.0}}) {
      for (const double tol : {0.0, 1.0, 1.5}) {
        CHECK(surface_dice(a, b, sp, tol) == doctest::Approx(surface_dice_oracle(a, b, sp, tol)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("detection semantics at the Dice cutoffs") {
  // Two bars with |g| = |p| = 20 and 9 voxels in common: Dice 0.45.
  Mask g({3, 3, 40}), p({3, 3, 40});
  testing::fill_box(g, {1, 1, 0}, {1, 1, 20});
  testing::fill_box(p, {1, 1, 11}, {1, 1, 20});
  const std::vector<SubjectDetection> det{detect_lesions(p, g, {1, 1, 1})};
  REQUIRE(det[0].matches.size() == 1);
  CHECK(det[0].matches[0].dice == doctest::Approx(0.45));
  const auto curve = detection_curve(det);
  REQUIRE(curve.cutoffs.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) {
    const bool hit = curve.cutoffs[i] <= 0.4 + 1e-12;
    CHECK(curve.tp[i] == (hit ? 1 : 0));
    CHECK(curve.fp[i] == (hit ? 0 : 1));
    CHECK(curve.fn[i] == (hit ? 0 : 1));
  }
  CHECK(curve.ar == doctest::Approx(4.0 / 9.0));
}

TEST_CASE("detection edge conventions") {
  Mask g({8, 8, 8});
  testing::fill_box(g, {2, 2, 2}, {3, 3, 3});
  const std::vector<SubjectDetection> perfect{detect_lesions(g, g, {1, 1, 1})};
  for (const double f : detection_curve(perfect).f1) CHECK(f == 1.0);

  const std::vector<SubjectDetection> none{detect_lesions(Mask({8, 8, 8}), g, {1, 1, 1})};
  const auto c = detection_curve(none);
  for (std::size_t i = 0; i < c.cutoffs.size(); ++i) {
    CHECK(c.recall[i] == 0.0);
    CHECK(c.precision[i] == 0.0);
    CHECK(c.f1[i] == 0.0);
  }
  const std::vector<SubjectDetection> empty{detect_lesions(Mask({8, 8, 8}), Mask({8, 8, 8}), {1, 1, 1})};
  CHECK(detection_curve(empty).af1 == 1.0);
}

TEST_CASE("detection recall never increases with the cutoff") {
  std::vector<SubjectDetection> det;
  for (std::uint64_t s = 0; s < 4; ++s) {
    det.push_back(detect_lesions(testing::random_mask({12, 12, 12}, 0.05, s),
                                 testing::random_mask({12, 12, 12}, 0.05, s + 10), {1, 1, 1}));
  }
  const auto c = detection_curve(det);
  for (std::size_t i = 1; i < c.cutoffs.size(); ++i) {
    CHECK(c.tp[i] <= c.tp[i - 1]);
    CHECK(c.recall[i] <= c.recall[i - 1]);
  }
}

TEST_CASE("greedy matching is one-to-one by descending Dice") {
  // One predicted blob overlaps two ground-truth lesions; the better overlap wins.
  Mask g({1, 1, 20}), p({1, 1, 20});
  testing::fill_box(g, {0, 0, 0}, {1, 1, 4});
  testing::fill_box(g, {0, 0, 6}, {1, 1, 8});
  testing::fill_box(p, {0, 0, 3}, {1, 1, 9});
  const auto gl = extract_lesions(g), pl = extract_lesions(p);
  const auto m = match_lesions(gl, pl, g.dims());
  REQUIRE(m.size() == 1);
  CHECK(gl[m[0].gt].size() == 8);
  CHECK(m[0].dice == doctest::Approx(2.0 * 6 / (8 + 9)));
}

TEST_CASE("localization error is the centroid distance") {
  Mask g({20, 8, 8});
  testing::fill_box(g, {2, 2, 2}, {10, 3, 3});
  const auto p = shifted(g, {3, 0, 0});
  const std::vector<SubjectDetection> same{detect_lesions(g, g, {1, 1, 1})};
  CHECK(localization_error(same).mean_mm == 0.0);
  const std::vector<SubjectDetection> off{detect_lesions(p, g, {1, 1, 1})};
  const auto loc = localization_error(off);
  CHECK(loc.count == 1);
  CHECK(loc.mean_mm == doctest::Approx(3.0));
  CHECK(loc.std_mm == doctest::Approx(0.0));
  const std::vector<SubjectDetection> scaled{detect_lesions(p, g, {2, 1, 1})};
  CHECK(localization_error(scaled).mean_mm == doctest::Approx(6.0));
  const std::vector<SubjectDetection> nothing{detect_lesions(Mask(g.dims()), g, {1, 1, 1})};
  CHECK(localization_error(nothing).empty());
}

TEST_CASE("threshold buckets use strict and non-strict inequalities") {
  const std::vector<double> ones{1.0, 1.0};
  const auto b1 = threshold_buckets(ones);
  for (const auto n : b1.below) CHECK(n == 0);
  for (const auto n : b1.at_least) CHECK(n == 2);

  const std::vector<double> one{0.35};
  const auto b = threshold_buckets(one);
  CHECK(b.below == std::vector<std::int64_t>{0, 0, 0, 1, 1});
  CHECK(b.at_least == std::vector<std::int64_t>{0, 0, 0});
  const std::vector<double> edge{0.5};
  CHECK(threshold_buckets(edge).below[4] == 0);
  CHECK(threshold_buckets(edge).at_least[0] == 1);
}

TEST_CASE("summary uses the population deviation") {
  const std::vector<double> v{1, 2, 3, 4};
  const auto s = summarize(v);
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(1.25)));
}

namespace {

std::vector<EvalCase> eval_fixture() {
  std::vector<EvalCase> cases;
  for (std::uint64_t s = 0; s < 4; ++s) {
    EvalCase c;
    c.subject_id = "s" + std::to_string(s);
    c.gt = Mask({10, 10, 10});
    testing::fill_box(c.gt, {2, 2, 2}, {4, 4, 4});
    c.pred = shifted(c.gt, {static_cast<std::int64_t>(s), 0, 0});
    cases.push_back(c);
  }
  return cases;
}

}  // namespace

TEST_CASE("evaluation report aggregates are recomputable") {
  auto cases = eval_fixture();
  cases.push_back({"bad", Mask({4, 4, 4}), Mask({5, 5, 5}), {1, 1, 1}});
  auto r = evaluate(cases);
  CHECK(r.excluded == std::vector<std::string>{"bad"});
  REQUIRE(r.subjects.size() == 4);
  CHECK(r.subjects[0].dice == 1.0);
  CHECK(r.subjects[1].dice == doctest::Approx(0.75));
  std::vector<double> dice;
  for (const auto& s : r.subjects) dice.push_back(s.dice);
  CHECK(r.summary[0].mean == doctest::Approx(summarize(dice).mean));

  r.config_hash = "abc";
  r.seed = 9;
  auto back = report_from_json(to_json(r));
  CHECK(back.global_dice == r.global_dice);
  CHECK(back.config_hash == "abc");
  CHECK(back.seed == 9);
  CHECK(back.excluded == r.excluded);
  const auto saved = back.summary;
  back.summary = {};
  back.buckets.below.clear();
  reaggregate(back);
  for (std::size_t m = 0; m < 5; ++m) {
    CHECK(back.summary[m].mean == doctest::Approx(saved[m].mean).epsilon(1e-12));
    CHECK(back.summary[m].std == doctest::Approx(saved[m].std).epsilon(1e-12));
  }
  CHECK(back.buckets.below == r.buckets.below);
  CHECK(back.detection.af1 == r.detection.af1);

  std::ostringstream csv;
  write_csv(csv, r);
  CHECK(csv.str().find("s3") != std::string::npos);
}

TEST_CASE("comparing two reports yields per-subject deltas") {
  const auto cases = eval_fixture();
  const auto a = evaluate(cases);
  auto better = cases;
  for (auto& c : better) c.pred = c.gt;
  const auto b = evaluate(better);
  const auto d = compare_reports(a, b);
  REQUIRE(d.size() == 4);
  CHECK(d[0].delta[0] == 0.0);
  CHECK(d[1].delta[0] == doctest::Approx(0.25));
  CHECK(metric_value(b.subjects[1], 0) - metric_value(a.subjects[1], 0) == doctest::Approx(d[1].delta[0]));
}
