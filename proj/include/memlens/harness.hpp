#pragma once

#include "memlens/memoryless.hpp"
#include "memlens/report.hpp"

#include <optional>
#include <string>
#include <vector>

namespace memlens {

// ceil(log(1e-10) / log(max decay)); 0 without memory.
long burn_in_steps(const OptimizerSpec& spec);

/// For each h: max_{n <= floor(T/h)} ||theta^(n) - theta~^(n)||_inf between the
/// memoryful run and the memoryless run of `kind`, both from the same start.
/// h_grid needs at least 5 distinct positive steps.
SweepReport global_error_sweep(const RunConfig& config, const std::vector<double>& h_grid, MemorylessKind kind);

struct DefectRow {
  double h = 0.0;
  long n = 0;
  double defect = 0.0;
};

struct DefectSweep {
  SweepReport report;  // metric: sup over n of the one-step defect
  std::vector<DefectRow> rows;

  // Header h,n,defect; rows by h descending then n, then a slope row.
  std::string rows_csv() const;
};

DefectSweep defect_sweep(const RunConfig& config, const std::vector<double>& h_grid, MemorylessKind kind = {});

struct ClosenessRow {
  double h = 0.0;
  long n = 0;
  double t = 0.0;
  double gap_second = 0.0;
  double gap_first = 0.0;
};

struct ClosenessSummary {
  double h = 0.0;
  long steps = 0;
  long burn_in = 0;
  long compared = 0;  // steps entering the fraction
  double fraction_second_le_first = 0.0;
  bool burn_in_covers_run = false;  // no step survives burn-in; every step is compared
  std::string error;                // non-empty when a run left the domain
};

struct ClosenessReport {
  std::vector<ClosenessRow> rows;
  std::vector<ClosenessSummary> summaries;  // one per h, in input order

  // Header h,n,t,gap_second,gap_first.
  std::string rows_csv() const;
  std::string summary_json() const;
};

/// Per step gaps between the memoryful run and the second- and first-order
/// memoryless runs, plus the share of post-burn-in steps where the
/// second-order gap does not exceed the first-order one. With `lambda_h`
/// set, each h runs with weight decay lambda_h / h.
ClosenessReport trajectory_closeness(const RunConfig& config, const std::vector<double>& h_list,
                                     std::optional<double> lambda_h = std::nullopt);

// Log-spaced h grid base * 2^-j for j = 0 .. count-1.
std::vector<double> halving_grid(double base, int count);

}  // namespace memlens
