#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mpls/metrics.hpp"

namespace mpls {

struct NamedReport {
  std::string name;
  EvalReport report;
};

// Minimal SVG figures: per-subject box plots per metric, threshold-bucket
// bars and the detection curve. Several reports are drawn side by side.

void write_subject_boxplot(const std::filesystem::path& path, const std::vector<NamedReport>& reports);
void write_bucket_bars(const std::filesystem::path& path, const std::vector<NamedReport>& reports);
void write_detection_plot(const std::filesystem::path& path, const std::vector<NamedReport>& reports);

/// All three figures into `dir`; returns their paths.
std::vector<std::filesystem::path> write_figures(const std::filesystem::path& dir,
                                                 const std::vector<NamedReport>& reports);

}  // namespace mpls
