#include "memlens/ode.hpp"

#include "memlens/correction.hpp"

#include <algorithm>
#include <cmath>

namespace memlens {

ParamVector ModifiedOde::rhs(const ParamVector& theta, bool with_g2) const {
  ParamVector out = G1(theta);
  if (with_g2) out += h * G2(theta);
  return out;
}

ModifiedOde build_modified_ode(const OptimizerSpec& spec, const LossPtr& loss, JvpMode mode) {
  MomentumModel(spec).require_smooth("the modified equation");
  ModifiedOde ode;
  ode.h = spec.h;
  ode.loss = loss;
  ode.G1 = [spec, loss](const ParamVector& theta) -> ParamVector { return -eval_F_limit(spec, *loss, theta); };
  // The correction is linear in h, so c / h is the correction at unit step.
  const OptimizerSpec unit = spec.with_h(1.0);
  auto g1 = ode.G1;
  ode.G2 = [spec, unit, loss, mode, g1](const ParamVector& theta) -> ParamVector {
    const ParamVector c_over_h = correction_closed(unit, *loss, theta, 0, true).vector;
    ParamVector dg1_g1;
    if (mode == JvpMode::Analytic) {
      // grad G1 . G1 = (-J_F)(-F) = J_F F.
      dg1_g1 = jvp_F_limit(spec, *loss, theta, eval_F_limit(spec, *loss, theta));
    } else {
      const ParamVector v = g1(theta);
      const double step = 1e-6 / std::max(1.0, linf_norm(v));
      dg1_g1 = (g1(theta + step * v) - g1(theta - step * v)) / (2.0 * step);
    }
    return -(c_over_h + 0.5 * dg1_g1);
  };
  return ode;
}

Trajectory integrate_rk4(const ModifiedOde& ode, const ParamVector& theta0, double T, double dt, bool with_g2) {
  if (!(ode.h > 0.0)) throw Error("integrate_rk4: the modified equation needs h > 0");
  if (!(dt > 0.0) || dt > ode.h / 4.0 * (1.0 + 1e-12)) {
    throw Error("integrate_rk4: dt = " + format_double(dt) + " must lie in (0, h/4] with h = " + format_double(ode.h));
  }
  const long substeps = static_cast<long>(std::ceil(ode.h / dt - 1e-9));
  const double step = ode.h / static_cast<double>(substeps);
  const long samples = iteration_count(T, ode.h);

  Trajectory traj;
  traj.h = ode.h;
  traj.T = T;
  ode.loss->require_in_domain(theta0, "t = 0");
  traj.record(*ode.loss, theta0);
  ParamVector y = theta0;
  auto f = [&](const ParamVector& x) { return ode.rhs(x, with_g2); };
  for (long n = 0; n < samples; ++n) {
    for (long s = 0; s < substeps; ++s) {
      const ParamVector k1 = f(y);
      const ParamVector k2 = f(y + 0.5 * step * k1);
      const ParamVector k3 = f(y + 0.5 * step * k2);
      const ParamVector k4 = f(y + step * k3);
      y += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    try {
      ode.loss->require_in_domain(y, "t = " + format_double(static_cast<double>(n + 1) * ode.h));
    } catch (const DomainExit& e) {
      traj.domain_error = e.what();
      break;
    }
    traj.record(*ode.loss, y);
  }
  return traj;
}

long ode_burn_in(const OptimizerSpec& spec) {
  const double beta = spec.max_decay();
  if (!(beta > 0.0)) return 0;
  return static_cast<long>(std::ceil(std::log(1e-12) / std::log(beta)));
}

SweepReport compare_discrete_vs_ode(const RunConfig& config, const std::vector<double>& h_grid,
                                    OdeCompareOptions options) {
  if (h_grid.empty()) throw Error("compare_discrete_vs_ode: h grid is empty");
  const LossPtr loss = build_loss(config.loss, config.dim, config.seed);
  const ParamVector theta0 = initial_theta(config);
  // Every h burns in for the same time, so all comparisons cover one window.
  const double h_max = *std::max_element(h_grid.begin(), h_grid.end());
  const double burn_time = static_cast<double>(ode_burn_in(config.optimizer)) * h_max;
  SweepReport report;
  report.experiment = options.with_g2 ? "ode-compare" : "ode-compare-no-g2";
  report.metric_name = "max_error";
  report.points.resize(h_grid.size());

#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < h_grid.size(); ++i) {
    SweepPoint& point = report.points[i];
    point.h = h_grid[i];
    try {
      const OptimizerSpec spec = config.optimizer.with_h(h_grid[i]);
      const long burn = std::max(ode_burn_in(spec), static_cast<long>(std::ceil(burn_time / spec.h - 1e-9)));
      const long steps = iteration_count(config.T, spec.h);
      const Trajectory disc = run_memoryful_steps(spec, loss, theta0, burn + steps);
      if (!disc.complete()) throw DomainExit(*disc.domain_error);
      const ModifiedOde ode = build_modified_ode(spec, loss);
      const Trajectory flow = integrate_rk4(ode, disc.iterates[static_cast<std::size_t>(burn)],
                                            config.T, spec.h / options.dt_divisor, options.with_g2);
      if (!flow.complete()) throw DomainExit(*flow.domain_error);
      double worst = 0.0;
      for (std::size_t j = 0; j < flow.size(); ++j) {
        worst = std::max(worst, linf_distance(disc.iterates[static_cast<std::size_t>(burn) + j], flow.iterates[j]));
      }
      point.metric = worst;
    } catch (const std::exception& e) {
      point.valid = false;
      point.note = e.what();
    }
  }
  report.metadata.emplace_back("burn_in_steps_at_h_max", std::to_string(ode_burn_in(config.optimizer)));
  report.metadata.emplace_back("burn_in_time", format_double(burn_time));
  report.finalize();
  return report;
}

}  // namespace memlens
