#include "mpls/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mpls/errors.hpp"

namespace mpls {

namespace fs = std::filesystem;

namespace {

const char* kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377"};

const char* colour(std::size_t i) { return kPalette[i % (sizeof kPalette / sizeof kPalette[0])]; }

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

class Svg {
 public:
  Svg(double w, double h) : w_(w), h_(h) {}

  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
    os_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2 << "\" stroke=\"" << stroke
        << "\" stroke-width=\"" << width << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
    os_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h << "\" fill=\"" << fill
        << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill) {
    os_ << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r << "\" fill=\"" << fill << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 11) {
    os_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
        << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << escape(s) << "</text>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    os_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) os_ << x << ',' << y << ' ';
    os_ << "\"/>\n";
  }

  void save(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write figure " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_ << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << os_.str() << "</svg>\n";
  }

 private:
  double w_, h_;
  std::ostringstream os_;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// Unit interval y axis with grid lines every 0.2.
void unit_axis(Svg& svg, double left, double top, double height, double right) {
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    const double y = top + height * (1.0 - v);
    svg.line(left, y, right, y, "#dddddd");
    svg.text(left - 6, y + 4, fmt(v, 1), "end", 10);
  }
  svg.line(left, top, left, top + height, "black");
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void legend(Svg& svg, const std::vector<NamedReport>& reports, double x, double y) {
  for (std::size_t r = 0; r < reports.size(); ++r) {
    svg.rect(x, y + 16.0 * static_cast<double>(r) - 9, 10, 10, colour(r));
    svg.text(x + 14, y + 16.0 * static_cast<double>(r), reports[r].name, "start", 11);
  }
}

}  // namespace

void write_subject_boxplot(const fs::path& path, const std::vector<NamedReport>& reports) {
  const double left = 50, top = 30, height = 260, group_w = 40.0 + 30.0 * static_cast<double>(reports.size());
  const double width = left + group_w * static_cast<double>(kMetricNames.size()) + 140;
  Svg svg(width, top + height + 50);
  svg.text(width / 2, 18, "Per-subject scores", "middle", 13);
  unit_axis(svg, left, top, height, left + group_w * static_cast<double>(kMetricNames.size()));
  auto ypos = [&](double v) { return top + height * (1.0 - v); };
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    const double gx = left + group_w * static_cast<double>(m);
    svg.text(gx + group_w / 2, top + height + 18, kMetricNames[m]);
    for (std::size_t r = 0; r < reports.size(); ++r) {
      std::vector<double> v;
      for (const auto& s : reports[r].report.subjects) v.push_back(metric_value(s, m));
      if (v.empty()) continue;
      const double cx = gx + 20 + 30.0 * static_cast<double>(r) + 10;
      const double q1 = quantile(v, 0.25), q2 = quantile(v, 0.5), q3 = quantile(v, 0.75);
      const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
      svg.line(cx, ypos(lo), cx, ypos(hi), "black");
      svg.rect(cx - 9, ypos(q3), 18, std::max(1.0, ypos(q1) - ypos(q3)), colour(r), "black");
      svg.line(cx - 9, ypos(q2), cx + 9, ypos(q2), "black", 2);
      for (const double x : v) svg.circle(cx + 12, ypos(x), 1.8, "#333333");
    }
  }
  legend(svg, reports, width - 130, top + 10);
  svg.save(path);
}

void write_bucket_bars(const fs::path& path, const std::vector<NamedReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("write_bucket_bars: no reports");
  const auto& b0 = reports.front().report.buckets;
  std::vector<std::string> labels;
  for (const double t : b0.low_thresholds) labels.push_back("<" + fmt(t, 1));
  for (const double t : b0.high_thresholds) labels.push_back(">=" + fmt(t, 1));
  std::int64_t vmax = 1;
  std::vector<std::vector<std::int64_t>> counts;
  for (const auto& r : reports) {
    std::vector<std::int64_t> c(r.report.buckets.below.begin(), r.report.buckets.below.end());
    c.insert(c.end(), r.report.buckets.at_least.begin(), r.report.buckets.at_least.end());
    for (const auto x : c) vmax = std::max(vmax, x);
    counts.push_back(std::move(c));
  }
  const double left = 50, top = 30, height = 240, group_w = 20.0 + 18.0 * static_cast<double>(reports.size());
  const double width = left + group_w * static_cast<double>(labels.size()) + 140;
  Svg svg(width, top + height + 50);
  svg.text(width / 2, 18, "Subjects per Dice threshold", "middle", 13);
  svg.line(left, top + height, left + group_w * static_cast<double>(labels.size()), top + height, "black");
  svg.line(left, top, left, top + height, "black");
  svg.text(left - 6, top + 4, std::to_string(vmax), "end", 10);
  svg.text(left - 6, top + height, "0", "end", 10);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const double gx = left + group_w * static_cast<double>(k);
    svg.text(gx + group_w / 2, top + height + 18, labels[k], "middle", 10);
    for (std::size_t r = 0; r < counts.size(); ++r) {
      if (k >= counts[r].size()) continue;
      const double h = height * static_cast<double>(counts[r][k]) / static_cast<double>(vmax);
      const double x = gx + 10 + 18.0 * static_cast<double>(r);
      svg.rect(x, top + height - h, 14, h, colour(r));
      svg.text(x + 7, top + height - h - 3, std::to_string(counts[r][k]), "middle", 9);
    }
  }
  legend(svg, reports, width - 130, top + 10);
  svg.save(path);
}

void write_detection_plot(const fs::path& path, const std::vector<NamedReport>& reports) {
  const double left = 50, top = 30, height = 260, plot_w = 360;
  const double width = left + plot_w * 3 + 40 + 140;
  Svg svg(width, top + height + 50);
  const char* titles[3] = {"precision", "recall", "F1"};
  for (int panel = 0; panel < 3; ++panel) {
    const double px = left + (plot_w + 20) * panel;
    svg.text(px + plot_w / 2, 18, std::string("Lesion ") + titles[panel] + " vs Dice cutoff", "middle", 12);
    unit_axis(svg, px, top, height, px + plot_w);
    svg.line(px, top + height, px + plot_w, top + height, "black");
    for (int i = 1; i <= 9; ++i) svg.text(px + plot_w * (i - 0.5) / 9.0, top + height + 16, fmt(i / 10.0, 1), "middle", 9);
    for (std::size_t r = 0; r < reports.size(); ++r) {
      const auto& d = reports[r].report.detection;
      const auto& ys = panel == 0 ? d.precision : panel == 1 ? d.recall : d.f1;
      std::vector<std::pair<double, double>> pts;
      for (std::size_t k = 0; k < ys.size(); ++k) {
        pts.emplace_back(px + plot_w * (static_cast<double>(k) + 0.5) / static_cast<double>(ys.size()),
                         top + height * (1.0 - ys[k]));
      }
      svg.polyline(pts, colour(r));
      for (const auto& [x, y] : pts) svg.circle(x, y, 2.5, colour(r));
    }
  }
  legend(svg, reports, width - 130, top + 10);
  svg.save(path);
}

std::vector<fs::path> write_figures(const fs::path& dir, const std::vector<NamedReport>& reports) {
  fs::create_directories(dir);
  std::vector<fs::path> out{dir / "subject_boxplot.svg", dir / "threshold_buckets.svg", dir / "detection_curve.svg"};
  write_subject_boxplot(out[0], reports);
  write_bucket_bars(out[1], reports);
  write_detection_plot(out[2], reports);
  return out;
}

}  // namespace mpls
