#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace memlens {

// Metrics at or below this are rounding noise and never enter a fit.
inline constexpr double kFitFloor = 1e3 * 2.220446049250313e-16;

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares of log(metric) on log(h). Throws with fewer than 3
/// points.
LogLogFit fit_loglog(const std::vector<std::pair<double, double>>& points);

struct SweepPoint {
  double h = 0.0;
  double metric = 0.0;
  bool valid = true;
  std::string note;  // why the point was excluded, if it was
};

struct Gate {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Per-h measurements plus the fitted rate. Points are kept sorted by h
/// descending.
struct SweepReport {
  std::string experiment;
  std::string metric_name = "metric";
  std::vector<SweepPoint> points;
  std::optional<LogLogFit> fit;
  std::string status = "ok";  // "ok" or "degenerate"
  std::vector<Gate> gates;
  std::vector<std::pair<std::string, std::string>> metadata;

  // Sorts, then fits on valid points above the floor; marks "degenerate"
  // when fewer than 3 remain.
  void finalize();
  // Adds a slope gate requiring slope in [lo, hi] and r2 >= r2_min.
  const Gate& gate_slope(double lo, double hi, double r2_min);
  bool passed() const;
  // Header row,h,<metric_name>,valid; "point" rows, then slope/intercept/r2 rows.
  std::string to_csv() const;
  std::string summary_json() const;
};

}  // namespace memlens
