#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpls/lesions.hpp"
#include "mpls/volume.hpp"

namespace mpls {

// Ratios with a zero denominator score 1 when both masks (or lesion sets) are
// empty and 0 otherwise.

struct Confusion {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  Confusion& operator+=(const Confusion& o);
  double dice() const;
  double iou() const;
  double recall() const;
  double precision() const;
};

Confusion confusion(const Mask& pred, const Mask& gt);

/// 2TP / (2TP + FP + FN) over pooled counts.
double global_dice(std::span<const Confusion> per_subject);

/// Surfels are the voxel faces separating foreground from background (the
/// outside of the grid counts as background). Each surfel is represented by
/// its face centre; the score is the area of surfels of either mask lying
/// within `tolerance_mm` of the other mask's surfels over the total area.
double surface_dice(const Mask& pred, const Mask& gt, const Vec3& spacing, double tolerance_mm = 1.5);

struct SubjectScores {
  std::string subject_id;
  double dice = 0.0;
  double iou = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double surface_dice = 0.0;
};

SubjectScores subject_scores(const std::string& subject_id, const Mask& pred, const Mask& gt,
                             const Vec3& spacing, double tolerance_mm = 1.5);

struct LesionMatch {
  std::size_t gt = 0;
  std::size_t pred = 0;
  double dice = 0.0;
};

/// One-to-one greedy matching: overlapping pairs in order of descending
/// pairwise Dice (ties by gt index, then pred index).
std::vector<LesionMatch> match_lesions(std::span<const LesionInstance> gt, std::span<const LesionInstance> pred,
                                       const Dims3& dims);

/// Lesion detection outcome of one subject.
struct SubjectDetection {
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;
  std::vector<LesionMatch> matches;
  std::vector<double> centroid_distance_mm;  // parallel to matches
};

SubjectDetection detect_lesions(const Mask& pred, const Mask& gt, const Vec3& spacing,
                                Connectivity conn = Connectivity::TwentySix);

struct DetectionCurve {
  std::vector<double> cutoffs;
  std::vector<std::int64_t> tp, fp, fn;
  std::vector<double> precision, recall, f1;
  double ap = 0.0;
  double ar = 0.0;
  double af1 = 0.0;
};

std::vector<double> default_cutoffs();

/// A match counts as a true positive at cutoff t iff its Dice >= t. Counts
/// are pooled over subjects before the ratios are taken.
DetectionCurve detection_curve(std::span<const SubjectDetection> subjects,
                               std::span<const double> cutoffs = {});

struct LocalizationStats {
  std::size_t count = 0;
  double mean_mm = 0.0;
  double std_mm = 0.0;  // population standard deviation
  bool empty() const { return count == 0; }
};

/// Centroid distances of the matches with Dice >= cutoff.
LocalizationStats localization_error(std::span<const SubjectDetection> subjects, double cutoff = 0.1);

struct ThresholdBuckets {
  std::vector<double> low_thresholds{0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> high_thresholds{0.5, 0.6, 0.7};
  std::vector<std::int64_t> below;     // subjects with Dice < t
  std::vector<std::int64_t> at_least;  // subjects with Dice >= t
};

ThresholdBuckets threshold_buckets(std::span<const double> dice, ThresholdBuckets thresholds = {});

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

Summary summarize(std::span<const double> values);

struct EvalOptions {
  double tolerance_mm = 1.5;
  Connectivity connectivity = Connectivity::TwentySix;
  double localization_cutoff = 0.1;
};

struct EvalCase {
  std::string subject_id;
  Mask pred;
  Mask gt;
  Vec3 spacing{1.0, 1.0, 1.0};
};

struct EvalReport {
  double global_dice = 0.0;
  std::vector<SubjectScores> subjects;
  std::array<Summary, 5> summary{};  // dice, iou, recall, precision, surface_dice
  DetectionCurve detection;
  LocalizationStats localization;
  ThresholdBuckets buckets;
  std::vector<std::string> excluded;
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline constexpr std::array<const char*, 5> kMetricNames{"dice", "iou", "recall", "precision", "surface_dice"};

double metric_value(const SubjectScores& s, std::size_t metric);

EvalReport evaluate(std::span<const EvalCase> cases, const EvalOptions& opts = {});

/// Recomputes means, deviations and buckets from the per-subject entries.
void reaggregate(EvalReport& report);

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
void write_csv(std::ostream& os, const EvalReport& r);

struct SubjectDelta {
  std::string subject_id;
  std::array<double, 5> delta{};  // b - a per metric
};

/// Per-subject differences over the subjects present in both reports.
std::vector<SubjectDelta> compare_reports(const EvalReport& a, const EvalReport& b);

}  // namespace mpls
