#include "memlens/report.hpp"

#include "memlens/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace memlens {

LogLogFit fit_loglog(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) {
    throw Error("fit_loglog: need at least 3 points, got " + std::to_string(points.size()));
  }
  const double count = static_cast<double>(points.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [h, m] : points) {
    if (!(h > 0.0) || !(m > 0.0)) throw Error("fit_loglog: h and metric must be positive");
    mx += std::log(h);
    my += std::log(m);
  }
  mx /= count;
  my /= count;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (const auto& [h, m] : points) {
    const double dx = std::log(h) - mx;
    const double dy = std::log(m) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw Error("fit_loglog: all h values are equal");
  LogLogFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

void SweepReport::finalize() {
  std::stable_sort(points.begin(), points.end(), [](const SweepPoint& a, const SweepPoint& b) { return a.h > b.h; });
  std::vector<std::pair<double, double>> usable;
  for (SweepPoint& p : points) {
    if (p.valid && !(p.metric > kFitFloor)) {
      p.valid = false;
      if (p.note.empty()) p.note = "below floor";
    }
    if (p.valid) usable.emplace_back(p.h, p.metric);
  }
  if (usable.size() < 3) {
    status = "degenerate";
    fit.reset();
    return;
  }
  status = "ok";
  fit = fit_loglog(usable);
}

const Gate& SweepReport::gate_slope(double lo, double hi, double r2_min) {
  Gate g;
  g.name = experiment + ".slope";
  if (!fit) {
    g.passed = false;
    g.detail = "no fit (status " + status + ")";
  } else {
    g.passed = fit->slope >= lo && fit->slope <= hi && fit->r2 >= r2_min;
    g.detail = "slope " + format_double(fit->slope) + " in [" + format_double(lo) + ", " + format_double(hi) +
               "], r2 " + format_double(fit->r2) + " >= " + format_double(r2_min);
  }
  gates.push_back(g);
  return gates.back();
}

bool SweepReport::passed() const {
  return std::all_of(gates.begin(), gates.end(), [](const Gate& g) { return g.passed; });
}

std::string SweepReport::to_csv() const {
  std::ostringstream out;
  out << "row,h," << metric_name << ",valid\n";
  for (const SweepPoint& p : points) {
    out << "point," << format_double(p.h) << ',' << format_double(p.metric) << ',' << (p.valid ? 1 : 0) << '\n';
  }
  if (fit) {
    out << "slope,," << format_double(fit->slope) << ",\n";
    out << "intercept,," << format_double(fit->intercept) << ",\n";
    out << "r2,," << format_double(fit->r2) << ",\n";
  }
  return out.str();
}

std::string SweepReport::summary_json() const {
  nlohmann::ordered_json j;
  j["experiment"] = experiment;
  j["metric"] = metric_name;
  j["status"] = status;
  if (fit) {
    j["slope"] = fit->slope;
    j["intercept"] = fit->intercept;
    j["r2"] = fit->r2;
  }
  j["points"] = nlohmann::ordered_json::array();
  for (const SweepPoint& p : points) {
    nlohmann::ordered_json row{{"h", p.h}, {"metric", p.metric}, {"valid", p.valid}};
    if (!p.note.empty()) row["note"] = p.note;
    j["points"].push_back(row);
  }
  j["gates"] = nlohmann::ordered_json::array();
  for (const Gate& g : gates) j["gates"].push_back({{"name", g.name}, {"passed", g.passed}, {"detail", g.detail}});
  j["passed"] = passed();
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metadata) meta[k] = v;
  j["metadata"] = meta;
  return j.dump(2) + "\n";
}

}  // namespace memlens
