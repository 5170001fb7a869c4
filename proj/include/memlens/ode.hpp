#pragma once

#include "memlens/optimizer.hpp"
#include "memlens/report.hpp"

#include <functional>
#include <vector>

namespace memlens {

/// theta' = G1(theta) + h G2(theta), whose flow tracks the memoryless
/// iteration to second order in h.
struct ModifiedOde {
  std::function<ParamVector(const ParamVector&)> G1;
  std::function<ParamVector(const ParamVector&)> G2;
  double h = 0.0;
  LossPtr loss;  // for domain checks

  ParamVector rhs(const ParamVector& theta, bool with_g2 = true) const;
};

// How grad G1 . G1 is evaluated inside G2.
enum class JvpMode { Analytic, FiniteDifference };

ModifiedOde build_modified_ode(const OptimizerSpec& spec, const LossPtr& loss, JvpMode mode = JvpMode::Analytic);

/// Classical RK4 with a step of at most dt, landing exactly on t = n h and
/// returning those samples for n = 0 .. floor(T / h). Requires dt <= h / 4.
Trajectory integrate_rk4(const ModifiedOde& ode, const ParamVector& theta0, double T, double dt,
                         bool with_g2 = true);

// Steps the memoryful run spends before its n-dependent coefficients settle:
// ceil(log(1e-12) / log(max decay)), 0 without memory.
long ode_burn_in(const OptimizerSpec& spec);

struct OdeCompareOptions {
  bool with_g2 = true;
  double dt_divisor = 8.0;  // dt = h / dt_divisor
};

/// For each h: max_j ||theta^(b + j) - theta(j h)||_inf over j <= floor(T / h),
/// with the ODE started from the memoryful iterate theta^(b). The burn-in b is
/// the same time for every h, ode_burn_in steps at the largest h, so each h
/// skips at least ode_burn_in steps.
SweepReport compare_discrete_vs_ode(const RunConfig& config, const std::vector<double>& h_grid,
                                    OdeCompareOptions options = {});

}  // namespace memlens
