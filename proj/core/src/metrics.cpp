#include "mpls/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>

namespace mpls {

namespace {

double ratio(std::int64_t num, std::int64_t den, bool both_empty) {
  if (den == 0) return both_empty ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Confusion& Confusion::operator+=(const Confusion& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

// Empty prediction and empty ground truth <=> tp = fp = fn = 0.
double Confusion::dice() const { return ratio(2 * tp, 2 * tp + fp + fn, tp + fp + fn == 0); }
double Confusion::iou() const { return ratio(tp, tp + fp + fn, tp + fp + fn == 0); }
double Confusion::recall() const { return ratio(tp, tp + fn, tp + fp + fn == 0); }
double Confusion::precision() const { return ratio(tp, tp + fp, tp + fp + fn == 0); }

Confusion confusion(const Mask& pred, const Mask& gt) {
  if (pred.dims() != gt.dims()) throw std::invalid_argument("confusion: grid mismatch");
  Confusion c;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double global_dice(std::span<const Confusion> per_subject) {
  Confusion total;
  for (const auto& c : per_subject) total += c;
  return total.dice();
}

// ---------------------------------------------------------------------------
// surface Dice

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Surfel {
  Index3 pos;  // doubled-grid coordinates
  int axis;    // normal direction
};

// Face between voxels i-1 and i along an axis sits at doubled coordinate 2i;
// voxel centres sit at 2i+1.
std::vector<Surfel> surfels(const Mask& m) {
  std::vector<Surfel> out;
  const auto& d = m.dims();
  auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) -> bool {
    return m.contains(z, y, x) && m(z, y, x) != 0;
  };
  for (int axis = 0; axis < 3; ++axis) {
    Dims3 ext = d;
    ext[axis] += 1;
    for (std::int64_t z = 0; z < ext[0]; ++z)
      for (std::int64_t y = 0; y < ext[1]; ++y)
        for (std::int64_t x = 0; x < ext[2]; ++x) {
          Index3 lo{z, y, x};
          lo[axis] -= 1;
          if (at(z, y, x) == at(lo[0], lo[1], lo[2])) continue;
          Index3 pos{2 * z + 1, 2 * y + 1, 2 * x + 1};
          pos[axis] -= 1;
          out.push_back({pos, axis});
        }
  }
  return out;
}

// Lower envelope of parabolas; f holds squared distances (kInf = no site).
void edt_line(const double* f, double* out, std::int64_t n, std::int64_t stride, double w,
              std::vector<std::int64_t>& v, std::vector<double>& zb) {
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == kInf) continue;
    const double xq = w * static_cast<double>(q);
    if (k < 0) {
      k = 0;
      v[0] = q;
      zb[0] = -kInf;
      zb[1] = kInf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const auto p = v[static_cast<std::size_t>(k)];
      const double xp = w * static_cast<double>(p);
      s = ((fq + xq * xq) - (f[p * stride] + xp * xp)) / (2.0 * (xq - xp));
      if (s <= zb[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    zb[static_cast<std::size_t>(k)] = s;
    zb[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) {
    for (std::int64_t q = 0; q < n; ++q) out[q] = kInf;
    return;
  }
  std::size_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    const double xq = w * static_cast<double>(q);
    while (zb[j + 1] < xq) ++j;
    const auto p = v[j];
    const double dx = w * static_cast<double>(q - p);
    out[q] = dx * dx + f[p * stride];
  }
}

// Squared distance (mm) from every cell of the box to the nearest site.
std::vector<double> edt(const std::vector<Surfel>& sites, const Index3& lo, const Dims3& n, const Vec3& w) {
  const auto total = static_cast<std::size_t>(n[0] * n[1] * n[2]);
  std::vector<double> g(total, kInf);
  for (const auto& s : sites) {
    const auto z = s.pos[0] - lo[0], y = s.pos[1] - lo[1], x = s.pos[2] - lo[2];
    g[static_cast<std::size_t>((z * n[1] + y) * n[2] + x)] = 0.0;
  }
  const std::int64_t strides[3] = {n[1] * n[2], n[2], 1};
  const auto longest = static_cast<std::size_t>(std::max({n[0], n[1], n[2]}));
  std::vector<std::int64_t> v(longest);
  std::vector<double> zb(longest + 1), line(longest), tmp(longest);
  for (int axis = 0; axis < 3; ++axis) {
    const auto len = n[axis];
    const auto st = strides[axis];
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (std::int64_t i = 0; i < n[a1]; ++i)
      for (std::int64_t j = 0; j < n[a2]; ++j) {
        const auto base = i * strides[a1] + j * strides[a2];
        for (std::int64_t q = 0; q < len; ++q) line[static_cast<std::size_t>(q)] = g[static_cast<std::size_t>(base + q * st)];
        edt_line(line.data(), tmp.data(), len, 1, w[axis], v, zb);
        for (std::int64_t q = 0; q < len; ++q) g[static_cast<std::size_t>(base + q * st)] = tmp[static_cast<std::size_t>(q)];
      }
  }
  return g;
}

}  // namespace

double surface_dice(const Mask& pred, const Mask& gt, const Vec3& spacing, double tolerance_mm) {
  if (pred.dims() != gt.dims()) throw std::invalid_argument("surface_dice: grid mismatch");
  if (tolerance_mm < 0.0) throw std::invalid_argument("surface_dice: tolerance must be >= 0");
  const auto sp = surfels(pred);
  const auto sg = surfels(gt);
  if (sp.empty() && sg.empty()) return 1.0;
  if (sp.empty() || sg.empty()) return 0.0;

  Index3 lo{std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::max(),
            std::numeric_limits<std::int64_t>::max()};
  Index3 hi{std::numeric_limits<std::int64_t>::min(), std::numeric_limits<std::int64_t>::min(),
            std::numeric_limits<std::int64_t>::min()};
  for (const auto* list : {&sp, &sg})
    for (const auto& s : *list)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], s.pos[a]);
        hi[a] = std::max(hi[a], s.pos[a]);
      }
  const Dims3 n{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
  const Vec3 w{spacing[0] / 2.0, spacing[1] / 2.0, spacing[2] / 2.0};
  const double limit = tolerance_mm * tolerance_mm + 1e-9;

  std::array<std::int64_t, 3> within{0, 0, 0}, total{0, 0, 0};
  auto score = [&](const std::vector<Surfel>& from, const std::vector<Surfel>& to) {
    const auto d2 = edt(to, lo, n, w);
    for (const auto& s : from) {
      const auto idx = ((s.pos[0] - lo[0]) * n[1] + (s.pos[1] - lo[1])) * n[2] + (s.pos[2] - lo[2]);
      ++total[static_cast<std::size_t>(s.axis)];
      if (d2[static_cast<std::size_t>(idx)] <= limit) ++within[static_cast<std::size_t>(s.axis)];
    }
  };
  score(sp, sg);
  score(sg, sp);

  const std::array<double, 3> area{spacing[1] * spacing[2], spacing[0] * spacing[2], spacing[0] * spacing[1]};
  double num = 0.0, den = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    num += area[a] * static_cast<double>(within[a]);
    den += area[a] * static_cast<double>(total[a]);
  }
  return num / den;
}

SubjectScores subject_scores(const std::string& subject_id, const Mask& pred, const Mask& gt,
                             const Vec3& spacing, double tolerance_mm) {
  const auto c = confusion(pred, gt);
  SubjectScores s;
  s.subject_id = subject_id;
  s.dice = c.dice();
  s.iou = c.iou();
  s.recall = c.recall();
  s.precision = c.precision();
  s.surface_dice = surface_dice(pred, gt, spacing, tolerance_mm);
  return s;
}

// ---------------------------------------------------------------------------
// lesion-wise detection

std::vector<LesionMatch> match_lesions(std::span<const LesionInstance> gt, std::span<const LesionInstance> pred,
                                       const Dims3& dims) {
  Grid3<std::int32_t> label(dims, -1);
  for (std::size_t j = 0; j < pred.size(); ++j)
    for (const auto& v : pred[j].voxels) label(v[0], v[1], v[2]) = static_cast<std::int32_t>(j);

  std::vector<LesionMatch> pairs;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    std::map<std::int32_t, std::int64_t> inter;
    for (const auto& v : gt[i].voxels) {
      const auto l = label(v[0], v[1], v[2]);
      if (l >= 0) ++inter[l];
    }
    for (const auto& [j, count] : inter) {
      const auto ju = static_cast<std::size_t>(j);
      const double d = static_cast<double>(2 * count) / static_cast<double>(gt[i].size() + pred[ju].size());
      pairs.push_back({i, ju, d});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const LesionMatch& a, const LesionMatch& b) {
    if (a.dice != b.dice) return a.dice > b.dice;
    if (a.gt != b.gt) return a.gt < b.gt;
    return a.pred < b.pred;
  });
  std::vector<bool> gt_used(gt.size(), false), pred_used(pred.size(), false);
  std::vector<LesionMatch> out;
  for (const auto& p : pairs) {
    if (gt_used[p.gt] || pred_used[p.pred]) continue;
    gt_used[p.gt] = pred_used[p.pred] = true;
    out.push_back(p);
  }
  return out;
}

SubjectDetection detect_lesions(const Mask& pred, const Mask& gt, const Vec3& spacing, Connectivity conn) {
  if (pred.dims() != gt.dims()) throw std::invalid_argument("detect_lesions: grid mismatch");
  const auto g = extract_lesions(gt, conn, spacing);
  const auto p = extract_lesions(pred, conn, spacing);
  SubjectDetection out;
  out.n_gt = g.size();
  out.n_pred = p.size();
  out.matches = match_lesions(g, p, gt.dims());
  for (const auto& m : out.matches) {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = g[m.gt].centroid_mm[a] - p[m.pred].centroid_mm[a];
      s += d * d;
    }
    out.centroid_distance_mm.push_back(std::sqrt(s));
  }
  return out;
}

std::vector<double> default_cutoffs() {
  std::vector<double> c;
  for (int i = 1; i <= 9; ++i) c.push_back(i / 10.0);
  return c;
}

DetectionCurve detection_curve(std::span<const SubjectDetection> subjects, std::span<const double> cutoffs) {
  DetectionCurve curve;
  curve.cutoffs = cutoffs.empty() ? default_cutoffs() : std::vector<double>(cutoffs.begin(), cutoffs.end());
  std::int64_t n_gt = 0, n_pred = 0;
  for (const auto& s : subjects) {
    n_gt += static_cast<std::int64_t>(s.n_gt);
    n_pred += static_cast<std::int64_t>(s.n_pred);
  }
  const bool both_empty = n_gt == 0 && n_pred == 0;
  for (const double t : curve.cutoffs) {
    std::int64_t tp = 0;
    for (const auto& s : subjects)
      for (const auto& m : s.matches)
        if (m.dice >= t) ++tp;
    const auto fp = n_pred - tp;
    const auto fn = n_gt - tp;
    const double p = ratio(tp, tp + fp, both_empty);
    const double r = ratio(tp, tp + fn, both_empty);
    const double f = both_empty ? 1.0 : (p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0);
    curve.tp.push_back(tp);
    curve.fp.push_back(fp);
    curve.fn.push_back(fn);
    curve.precision.push_back(p);
    curve.recall.push_back(r);
    curve.f1.push_back(f);
  }
  const auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (const double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  curve.ap = mean(curve.precision);
  curve.ar = mean(curve.recall);
  curve.af1 = mean(curve.f1);
  return curve;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (const double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (const double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

LocalizationStats localization_error(std::span<const SubjectDetection> subjects, double cutoff) {
  std::vector<double> d;
  for (const auto& s : subjects)
    for (std::size_t i = 0; i < s.matches.size(); ++i)
      if (s.matches[i].dice >= cutoff) d.push_back(s.centroid_distance_mm[i]);
  LocalizationStats out;
  out.count = d.size();
  const auto sum = summarize(d);
  out.mean_mm = sum.mean;
  out.std_mm = sum.std;
  return out;
}

ThresholdBuckets threshold_buckets(std::span<const double> dice, ThresholdBuckets b) {
  b.below.assign(b.low_thresholds.size(), 0);
  b.at_least.assign(b.high_thresholds.size(), 0);
  for (const double d : dice) {
    for (std::size_t i = 0; i < b.low_thresholds.size(); ++i)
      if (d < b.low_thresholds[i]) ++b.below[i];
    for (std::size_t i = 0; i < b.high_thresholds.size(); ++i)
      if (d >= b.high_thresholds[i]) ++b.at_least[i];
  }
  return b;
}

double metric_value(const SubjectScores& s, std::size_t metric) {
  switch (metric) {
    case 0: return s.dice;
    case 1: return s.iou;
    case 2: return s.recall;
    case 3: return s.precision;
    case 4: return s.surface_dice;
    default: throw std::out_of_range("metric_value: unknown metric");
  }
}

void reaggregate(EvalReport& r) {
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    std::vector<double> v;
    for (const auto& s : r.subjects) v.push_back(metric_value(s, m));
    r.summary[m] = summarize(v);
  }
  std::vector<double> dice;
  for (const auto& s : r.subjects) dice.push_back(s.dice);
  ThresholdBuckets thresholds;
  thresholds.low_thresholds = r.buckets.low_thresholds;
  thresholds.high_thresholds = r.buckets.high_thresholds;
  r.buckets = threshold_buckets(dice, thresholds);
}

EvalReport evaluate(std::span<const EvalCase> cases, const EvalOptions& opts) {
  EvalReport r;
  std::vector<Confusion> conf;
  std::vector<SubjectDetection> det;
  for (const auto& c : cases) {
    if (c.pred.dims() != c.gt.dims()) {
      r.excluded.push_back(c.subject_id);
      continue;
    }
    conf.push_back(confusion(c.pred, c.gt));
    r.subjects.push_back(subject_scores(c.subject_id, c.pred, c.gt, c.spacing, opts.tolerance_mm));
    det.push_back(detect_lesions(c.pred, c.gt, c.spacing, opts.connectivity));
  }
  r.global_dice = global_dice(conf);
  r.detection = detection_curve(det);
  r.localization = localization_error(det, opts.localization_cutoff);
  reaggregate(r);
  return r;
}

// ---------------------------------------------------------------------------
// serialization

nlohmann::json to_json(const EvalReport& r) {
  using nlohmann::json;
  json j;
  j["global_dice"] = r.global_dice;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["conventions"] = {
      {"empty_subject", "a ratio with a zero denominator scores 1 when both masks are empty, else 0"},
      {"empty_prediction_precision", 0.0},
      {"std", "population"}};
  json subjects = json::array();
  for (const auto& s : r.subjects) {
    subjects.push_back({{"subject_id", s.subject_id},
                        {"dice", s.dice},
                        {"iou", s.iou},
                        {"recall", s.recall},
                        {"precision", s.precision},
                        {"surface_dice", s.surface_dice}});
  }
  j["subjects"] = subjects;
  json summary;
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    summary[kMetricNames[m]] = {{"mean", r.summary[m].mean}, {"std", r.summary[m].std}};
  }
  j["summary"] = summary;
  const auto& d = r.detection;
  j["detection"] = {{"cutoffs", d.cutoffs}, {"tp", d.tp},       {"fp", d.fp}, {"fn", d.fn},
                    {"precision", d.precision}, {"recall", d.recall}, {"f1", d.f1}, {"ap", d.ap},
                    {"ar", d.ar},           {"af1", d.af1}};
  j["localization"] = {{"count", r.localization.count},
                       {"mean_mm", r.localization.empty() ? json(nullptr) : json(r.localization.mean_mm)},
                       {"std_mm", r.localization.empty() ? json(nullptr) : json(r.localization.std_mm)}};
  j["threshold_buckets"] = {{"low_thresholds", r.buckets.low_thresholds},
                            {"below", r.buckets.below},
                            {"high_thresholds", r.buckets.high_thresholds},
                            {"at_least", r.buckets.at_least}};
  j["excluded"] = r.excluded;
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.global_dice = j.at("global_dice").get<double>();
  r.config_hash = j.value("config_hash", "");
  r.seed = j.value("seed", std::uint64_t{0});
  for (const auto& s : j.at("subjects")) {
    SubjectScores sc;
    sc.subject_id = s.at("subject_id").get<std::string>();
    sc.dice = s.at("dice").get<double>();
    sc.iou = s.at("iou").get<double>();
    sc.recall = s.at("recall").get<double>();
    sc.precision = s.at("precision").get<double>();
    sc.surface_dice = s.at("surface_dice").get<double>();
    r.subjects.push_back(sc);
  }
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    const auto& s = j.at("summary").at(kMetricNames[m]);
    r.summary[m] = {s.at("mean").get<double>(), s.at("std").get<double>()};
  }
  const auto& d = j.at("detection");
  r.detection.cutoffs = d.at("cutoffs").get<std::vector<double>>();
  r.detection.tp = d.at("tp").get<std::vector<std::int64_t>>();
  r.detection.fp = d.at("fp").get<std::vector<std::int64_t>>();
  r.detection.fn = d.at("fn").get<std::vector<std::int64_t>>();
  r.detection.precision = d.at("precision").get<std::vector<double>>();
  r.detection.recall = d.at("recall").get<std::vector<double>>();
  r.detection.f1 = d.at("f1").get<std::vector<double>>();
  r.detection.ap = d.at("ap").get<double>();
  r.detection.ar = d.at("ar").get<double>();
  r.detection.af1 = d.at("af1").get<double>();
  const auto& l = j.at("localization");
  r.localization.count = l.at("count").get<std::size_t>();
  if (!l.at("mean_mm").is_null()) r.localization.mean_mm = l.at("mean_mm").get<double>();
  if (!l.at("std_mm").is_null()) r.localization.std_mm = l.at("std_mm").get<double>();
  const auto& b = j.at("threshold_buckets");
  r.buckets.low_thresholds = b.at("low_thresholds").get<std::vector<double>>();
  r.buckets.below = b.at("below").get<std::vector<std::int64_t>>();
  r.buckets.high_thresholds = b.at("high_thresholds").get<std::vector<double>>();
  r.buckets.at_least = b.at("at_least").get<std::vector<std::int64_t>>();
  r.excluded = j.value("excluded", std::vector<std::string>{});
  return r;
}

void write_csv(std::ostream& os, const EvalReport& r) {
  os << "subject_id";
  for (const auto* name : kMetricNames) os << ',' << name;
  os << '\n';
  os.precision(17);
  for (const auto& s : r.subjects) {
    os << s.subject_id;
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) os << ',' << metric_value(s, m);
    os << '\n';
  }
}

std::vector<SubjectDelta> compare_reports(const EvalReport& a, const EvalReport& b) {
  std::map<std::string, const SubjectScores*> index;
  for (const auto& s : a.subjects) index[s.subject_id] = &s;
  std::vector<SubjectDelta> out;
  for (const auto& s : b.subjects) {
    const auto it = index.find(s.subject_id);
    if (it == index.end()) continue;
    SubjectDelta d;
    d.subject_id = s.subject_id;
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) d.delta[m] = metric_value(s, m) - metric_value(*it->second, m);
    out.push_back(d);
  }
  return out;
}

}  // namespace mpls
