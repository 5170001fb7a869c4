#include "memlens/memoryless.hpp"

#include <cmath>

namespace memlens {

std::string to_string(const MemorylessKind& kind) {
  if (kind.order == MemorylessOrder::FirstOrder) return "first-order";
  return kind.variant == CorrectionVariant::FiniteN ? "second-order" : "second-order-asymptotic";
}

ParamVector step_memoryless(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta, long n,
                            MemorylessKind kind) {
  ParamVector drift = eval_F_constant(spec, loss, theta, n);
  if (kind.order == MemorylessOrder::SecondOrder) {
    drift += correction_for_step(spec, loss, theta, n, kind.variant).vector;
  }
  return theta - spec.h * drift;
}

Trajectory run_memoryless(const OptimizerSpec& spec, const LossPtr& loss, const ParamVector& theta0, double T,
                          MemorylessKind kind) {
  Trajectory traj;
  traj.h = spec.h;
  traj.T = T;
  loss->require_in_domain(theta0, "step 0");
  traj.record(*loss, theta0);
  const long steps = iteration_count(T, spec.h);
  ParamVector theta = theta0;
  for (long n = 0; n < steps; ++n) {
    theta = step_memoryless(spec, *loss, theta, n, kind);
    try {
      loss->require_in_domain(theta, "memoryless step " + std::to_string(n + 1));
    } catch (const DomainExit& e) {
      traj.domain_error = e.what();
      break;
    }
    traj.record(*loss, theta);
  }
  return traj;
}

Trajectory run_memoryless(const RunConfig& config, MemorylessKind kind) {
  const LossPtr loss = build_loss(config.loss, config.dim, config.seed);
  return run_memoryless(config.optimizer, loss, initial_theta(config), config.T, kind);
}

std::vector<double> one_step_defect(const OptimizerSpec& spec, const LossModel& loss, const Trajectory& memoryless,
                                    long n_max) {
  const MomentumModel model(spec);
  std::vector<double> defects;
  if (memoryless.size() < 2) return defects;
  MomentumState state = initial_state(model, memoryless.iterates.front().size());
  const long last = std::min<long>(n_max, static_cast<long>(memoryless.size()) - 2);
  for (long n = 0; n <= last; ++n) {
    const ParamVector& now = memoryless.iterates[static_cast<std::size_t>(n)];
    const ParamVector& next = memoryless.iterates[static_cast<std::size_t>(n + 1)];
    const ParamVector F = advance(model, loss, state, now);
    defects.push_back(linf_norm(next - now + spec.h * F));
  }
  return defects;
}

std::vector<double> one_step_defect(const RunConfig& config, long n_max, MemorylessKind kind) {
  const LossPtr loss = build_loss(config.loss, config.dim, config.seed);
  const Trajectory traj = run_memoryless(config.optimizer, loss, initial_theta(config), config.T, kind);
  return one_step_defect(config.optimizer, *loss, traj, n_max);
}

ParamVector adamw_memoryless_update(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                    long n) {
  if (spec.kind != OptimizerKind::AdamW || !spec.bias_correction) {
    throw Error("adamw_memoryless_update needs a bias-corrected AdamW spec");
  }
  const double h = spec.h;
  const double eps = spec.eps;
  const double b1 = spec.beta1;
  const double b2 = spec.beta2;
  const ParamVector g = loss.grad(theta);
  const ParamVector grad_norm1 = loss.hvp(theta, softsign(g, eps));  // grad of ||grad L||_{1,eps}
  const ParamVector h_theta = loss.hvp(theta, theta);
  const double p1 = std::pow(b1, n + 1);
  const double p2 = std::pow(b2, n + 1);
  const double k1 = b1 / (1.0 - b1) - (n + 1) * p1 / (1.0 - p1);
  const double k2 = b2 / (1.0 - b2) - (n + 1) * p2 / (1.0 - p2);

  ParamVector next(theta.size());
  for (Index j = 0; j < theta.size(); ++j) {
    const double gj2 = g[j] * g[j];
    const double bracket = grad_norm1[j] + spec.lambda * h_theta[j];
    const double F = g[j] / std::sqrt(gj2 + eps) + spec.lambda * theta[j];
    const double M = -h * k2 * gj2 * bracket / std::pow(gj2 + eps, 1.5) + h * k1 * bracket / std::sqrt(gj2 + eps);
    next[j] = theta[j] - h * F - h * M;
  }
  return next;
}

ParamVector lion_memoryless_update(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                   long n) {
  const bool lion = spec.kind == OptimizerKind::LionK || spec.kind == OptimizerKind::Signum;
  if (!lion || !spec.bias_correction || spec.kspec != KSpec::SmoothedOneNorm) {
    throw Error("lion_memoryless_update needs bias-corrected Lion with the smoothed one-norm");
  }
  const double h = spec.h;
  const double eps = spec.eps;
  const double rho1 = spec.beta1;
  const double rho2 = spec.beta2;
  const ParamVector g = loss.grad(theta);
  // grad of ||grad L||_{1,eps} + lambda (grad L . theta - L) = H softsign(g) + lambda H theta.
  const ParamVector grad_bracket = loss.hvp(theta, softsign(g, eps)) + spec.lambda * loss.hvp(theta, theta);
  const double coef = rho1 / (1.0 - rho2) - (n + 1) * std::pow(rho2, n) * rho1 / (1.0 - std::pow(rho2, n + 1));

  ParamVector next(theta.size());
  for (Index j = 0; j < theta.size(); ++j) {
    const double gj2 = g[j] * g[j];
    const double F = g[j] / std::sqrt(gj2 + eps) + spec.lambda * theta[j];
    const double M = h * coef * eps / std::pow(gj2 + eps, 1.5) * grad_bracket[j];
    next[j] = theta[j] - h * F - h * M;
  }
  return next;
}

}  // namespace memlens
