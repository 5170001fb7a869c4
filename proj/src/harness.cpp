#include "memlens/harness.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace memlens {

namespace {

void require_grid(const std::vector<double>& h_grid, std::size_t min_points, const char* where) {
  std::set<double> distinct;
  for (double h : h_grid) {
    if (!(h > 0.0) || !std::isfinite(h)) throw Error(std::string(where) + ": h = " + format_double(h) + " is not positive");
    distinct.insert(h);
  }
  if (distinct.size() < min_points) {
    throw Error(std::string(where) + ": h grid needs at least " + std::to_string(min_points) + " distinct points, got " +
                std::to_string(distinct.size()));
  }
}

double decades(const std::vector<double>& h_grid) {
  const auto [lo, hi] = std::minmax_element(h_grid.begin(), h_grid.end());
  return std::log10(*hi / *lo);
}

std::string correction_source(const OptimizerSpec& spec, MemorylessKind kind) {
  if (kind.order == MemorylessOrder::FirstOrder) return "none";
  if (kind.variant == CorrectionVariant::Asymptotic) return to_string(CorrectionMethod::ClosedFormAsymptotic);
  return has_closed_finite_n(spec) ? to_string(CorrectionMethod::ClosedFormFiniteN)
                                   : to_string(CorrectionMethod::Contraction);
}

void echo_config(SweepReport& report, const RunConfig& config, MemorylessKind kind, const std::vector<double>& grid) {
  report.metadata.emplace_back("optimizer", to_string(config.optimizer.kind));
  report.metadata.emplace_back("memoryless", to_string(kind));
  report.metadata.emplace_back("correction", correction_source(config.optimizer, kind));
  report.metadata.emplace_back("loss", config.loss.id);
  report.metadata.emplace_back("seed", std::to_string(config.seed));
  report.metadata.emplace_back("dim", std::to_string(config.dim));
  report.metadata.emplace_back("T", format_double(config.T));
  report.metadata.emplace_back("h_decades", format_double(decades(grid)));
}

}  // namespace

long burn_in_steps(const OptimizerSpec& spec) {
  const double beta = spec.max_decay();
  if (!(beta > 0.0)) return 0;
  return static_cast<long>(std::ceil(std::log(1e-10) / std::log(beta)));
}

std::vector<double> halving_grid(double base, int count) {
  std::vector<double> grid;
  for (int j = 0; j < count; ++j) grid.push_back(std::ldexp(base, -j));
  return grid;
}

SweepReport global_error_sweep(const RunConfig& config, const std::vector<double>& h_grid, MemorylessKind kind) {
  require_grid(h_grid, 5, "global_error_sweep");
  const LossPtr loss = build_loss(config.loss, config.dim, config.seed);
  const ParamVector theta0 = initial_theta(config);
  SweepReport report;
  report.experiment = "global-error";
  report.metric_name = "max_error";
  report.points.resize(h_grid.size());

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < h_grid.size(); ++i) {
    SweepPoint& point = report.points[i];
    point.h = h_grid[i];
    try {
      const OptimizerSpec spec = config.optimizer.with_h(h_grid[i]);
      const Trajectory memoryful = run_memoryful(spec, loss, theta0, config.T);
      if (!memoryful.complete()) throw DomainExit("memoryful: " + *memoryful.domain_error);
      const Trajectory memoryless = run_memoryless(spec, loss, theta0, config.T, kind);
      if (!memoryless.complete()) throw DomainExit("memoryless: " + *memoryless.domain_error);
      double worst = 0.0;
      for (std::size_t n = 0; n < memoryful.size(); ++n) {
        worst = std::max(worst, linf_distance(memoryful.iterates[n], memoryless.iterates[n]));
      }
      point.metric = worst;
    } catch (const std::exception& e) {
      point.valid = false;
      point.note = e.what();
    }
  }

  echo_config(report, config, kind, h_grid);
  report.finalize();
  return report;
}

std::string DefectSweep::rows_csv() const {
  std::ostringstream out;
  out << "h,n,defect\n";
  for (const DefectRow& r : rows) out << format_double(r.h) << ',' << r.n << ',' << format_double(r.defect) << '\n';
  if (report.fit) out << "slope,," << format_double(report.fit->slope) << '\n';
  return out.str();
}

DefectSweep defect_sweep(const RunConfig& config, const std::vector<double>& h_grid, MemorylessKind kind) {
  require_grid(h_grid, 3, "defect_sweep");
  const LossPtr loss = build_loss(config.loss, config.dim, config.seed);
  const ParamVector theta0 = initial_theta(config);
  DefectSweep out;
  out.report.experiment = "defect";
  out.report.metric_name = "sup_defect";
  out.report.points.resize(h_grid.size());
  std::vector<std::vector<double>> per_h(h_grid.size());

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < h_grid.size(); ++i) {
    SweepPoint& point = out.report.points[i];
    point.h = h_grid[i];
    try {
      const OptimizerSpec spec = config.optimizer.with_h(h_grid[i]);
      const Trajectory traj = run_memoryless(spec, loss, theta0, config.T, kind);
      if (!traj.complete()) throw DomainExit("memoryless: " + *traj.domain_error);
      per_h[i] = one_step_defect(spec, *loss, traj, static_cast<long>(traj.size()));
      point.metric = per_h[i].empty() ? 0.0 : *std::max_element(per_h[i].begin(), per_h[i].end());
    } catch (const std::exception& e) {
      point.valid = false;
      point.note = e.what();
    }
  }

  // Rows follow the report's h-descending order.
  std::vector<std::size_t> order(h_grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return h_grid[a] > h_grid[b]; });
  for (std::size_t i : order) {
    for (std::size_t n = 0; n < per_h[i].size(); ++n) {
      out.rows.push_back({h_grid[i], static_cast<long>(n), per_h[i][n]});
    }
  }
  echo_config(out.report, config, kind, h_grid);
  out.report.finalize();
  return out;
}

std::string ClosenessReport::rows_csv() const {
  std::ostringstream out;
  out << "h,n,t,gap_second,gap_first\n";
  for (const ClosenessRow& r : rows) {
    out << format_double(r.h) << ',' << r.n << ',' << format_double(r.t) << ',' << format_double(r.gap_second) << ','
        << format_double(r.gap_first) << '\n';
  }
  return out.str();
}

std::string ClosenessReport::summary_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const ClosenessSummary& s : summaries) {
    nlohmann::ordered_json row{{"h", s.h},
                               {"steps", s.steps},
                               {"burn_in", s.burn_in},
                               {"compared", s.compared},
                               {"fraction_second_le_first", s.fraction_second_le_first},
                               {"burn_in_covers_run", s.burn_in_covers_run}};
    if (!s.error.empty()) row["error"] = s.error;
    j.push_back(row);
  }
  return j.dump(2) + "\n";
}

ClosenessReport trajectory_closeness(const RunConfig& config, const std::vector<double>& h_list,
                                     std::optional<double> lambda_h) {
  if (h_list.empty()) throw Error("trajectory_closeness: h list is empty");
  const LossPtr loss = build_loss(config.loss, config.dim, config.seed);
  const ParamVector theta0 = initial_theta(config);
  std::vector<std::vector<ClosenessRow>> per_h(h_list.size());
  ClosenessReport report;
  report.summaries.resize(h_list.size());

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < h_list.size(); ++i) {
    ClosenessSummary& summary = report.summaries[i];
    const double h = h_list[i];
    summary.h = h;
    try {
      OptimizerSpec spec = config.optimizer.with_h(h);
      if (lambda_h) spec.lambda = *lambda_h / h;
      const Trajectory memoryful = run_memoryful(spec, loss, theta0, config.T);
      const Trajectory second = run_memoryless(spec, loss, theta0, config.T, {MemorylessOrder::SecondOrder});
      const Trajectory first = run_memoryless(spec, loss, theta0, config.T, {MemorylessOrder::FirstOrder});
      for (const Trajectory* t : {&memoryful, &second, &first}) {
        if (!t->complete()) throw DomainExit(*t->domain_error);
      }
      summary.steps = static_cast<long>(memoryful.size()) - 1;
      summary.burn_in = burn_in_steps(spec);
      summary.burn_in_covers_run = summary.burn_in > summary.steps;
      const long start = summary.burn_in_covers_run ? 0 : summary.burn_in;
      long wins = 0;
      for (std::size_t n = 0; n < memoryful.size(); ++n) {
        ClosenessRow row;
        row.h = h;
        row.n = static_cast<long>(n);
        row.t = static_cast<double>(n) * h;
        row.gap_second = linf_distance(memoryful.iterates[n], second.iterates[n]);
        row.gap_first = linf_distance(memoryful.iterates[n], first.iterates[n]);
        if (row.n >= start) {
          ++summary.compared;
          if (row.gap_second <= row.gap_first) ++wins;
        }
        per_h[i].push_back(row);
      }
      summary.fraction_second_le_first =
          summary.compared > 0 ? static_cast<double>(wins) / static_cast<double>(summary.compared) : 0.0;
    } catch (const std::exception& e) {
      summary.error = e.what();
    }
  }

  for (auto& rows : per_h) report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  return report;
}

}  // namespace memlens
