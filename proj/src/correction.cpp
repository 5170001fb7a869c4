#include "memlens/correction.hpp"

#include "memlens/optimizer.hpp"

#include <cmath>
#include <sstream>

namespace memlens {

std::string to_string(CorrectionMethod method) {
  switch (method) {
    case CorrectionMethod::BruteForce: return "bruteforce";
    case CorrectionMethod::Contraction: return "contraction";
    case CorrectionMethod::ClosedFormAsymptotic: return "closed-asymptotic";
    case CorrectionMethod::ClosedFormFiniteN: return "closed-finite-n";
  }
  return "unknown";
}

namespace {

void require_n(long n) {
  if (n < 0) throw Error("correction: n must be >= 0, got " + std::to_string(n));
}

// Everything the generic evaluators share: features at theta, F^(s)(theta)
// for s < n, and the momenta at step n.
struct FrozenPoint {
  MomentumModel model;
  ParamVector grad;
  std::vector<ParamVector> f;
  std::vector<ParamVector> m_n;

  FrozenPoint(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta, long n)
      : model(spec), grad(loss.grad(theta)), f(model.features(loss, theta)) {
    model.require_smooth("the correction term");
    m_n = scaled(n);
  }

  std::vector<ParamVector> scaled(long s) const {
    std::vector<ParamVector> m = f;
    for (std::size_t l = 0; l < m.size(); ++l) m[l] *= model.total_weight(l, s);
    return m;
  }

  ParamVector F(long s) const { return model.combine(scaled(s)); }
};

CorrectionTerm make_term(ParamVector v, long n, CorrectionMethod method) {
  CorrectionTerm t;
  t.vector = std::move(v);
  t.n = n;
  t.method = method;
  return t;
}

// sum_{k=1}^n k beta^k.
double weighted_power_sum(double beta, long n) {
  if (beta == 0.0) return 0.0;
  const double one = 1.0 - beta;
  return beta * (1.0 - static_cast<double>(n + 1) * ipow(beta, n) + static_cast<double>(n) * ipow(beta, n + 1)) /
         (one * one);
}

// beta/(1-beta) - (n+1) beta^(n+1) / (1 - beta^(n+1)), the bias-corrected
// Adam memory coefficient; beta/(1-beta) in the limit.
double adam_coefficient(double beta, long n, bool asymptotic) {
  const double lead = beta / (1.0 - beta);
  if (asymptotic) return lead;
  const double p = ipow(beta, n + 1);
  return lead - static_cast<double>(n + 1) * p / (1.0 - p);
}

CorrectionTerm adam_family(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta, long n,
                           bool asymptotic, bool nesterov_momentum) {
  require_n(n);
  if (!asymptotic && !spec.bias_correction) {
    throw Error("closed finite-n Adam correction requires bias_correction; use the contraction instead");
  }
  const double eps = spec.eps;
  const ParamVector g = loss.grad(theta);
  const ParamVector q = loss.hvp(theta, softsign(g, eps)) + spec.lambda * loss.hvp(theta, theta);
  double a1 = adam_coefficient(spec.beta1, n, asymptotic);
  if (nesterov_momentum) a1 *= spec.beta1;
  const double a2 = adam_coefficient(spec.beta2, n, asymptotic);
  const Eigen::ArrayXd s = g.array().square() + eps;
  const ParamVector c = (spec.h * (a1 - a2 + eps * a2 / s) * q.array() / s.sqrt()).matrix();
  return make_term(c, n, asymptotic ? CorrectionMethod::ClosedFormAsymptotic : CorrectionMethod::ClosedFormFiniteN);
}

}  // namespace

CorrectionTerm correction_bruteforce(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                     long n) {
  require_n(n);
  const FrozenPoint at(spec, loss, theta, n);
  const MomentumModel& model = at.model;
  ParamVector c = ParamVector::Zero(theta.size());
  ParamVector partial = ParamVector::Zero(theta.size());  // sum_{s=n-k}^{n-1} F^(s)(theta)
  for (long k = 1; k <= n; ++k) {
    partial += at.F(n - k);
    for (std::size_t l = 0; l < model.size(); ++l) {
      const double w = model.weight(l, n).lag * ipow(model.channels()[l].decay, k - 1);
      if (w == 0.0) continue;
      c += model.combine_partial(l, at.m_n, w * model.feature_jvp(l, loss, theta, at.grad, partial));
    }
  }
  return make_term(spec.h * c, n, CorrectionMethod::BruteForce);
}

CorrectionTerm correction_contraction(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                      long n) {
  require_n(n);
  const FrozenPoint at(spec, loss, theta, n);
  const MomentumModel& model = at.model;
  const Index d = theta.size();
  std::vector<ParamVector> folded(model.size(), ParamVector::Zero(d));
  ParamVector partial = ParamVector::Zero(d);
  for (long k = 1; k <= n; ++k) {
    partial += at.F(n - k);
    for (std::size_t l = 0; l < model.size(); ++l) {
      folded[l] += ipow(model.channels()[l].decay, k - 1) * partial;
    }
  }
  ParamVector c = ParamVector::Zero(d);
  for (std::size_t l = 0; l < model.size(); ++l) {
    const double lag = model.weight(l, n).lag;
    if (lag == 0.0 || n == 0) continue;
    c += model.combine_partial(l, at.m_n, lag * model.feature_jvp(l, loss, theta, at.grad, folded[l]));
  }
  return make_term(spec.h * c, n, CorrectionMethod::Contraction);
}

double heavyball_finite_n_coefficient(double beta, long n) {
  if (n <= 0 || beta == 0.0) return 0.0;
  const double one = 1.0 - beta;
  const double bn = ipow(beta, n);
  if (bn <= 0.5) {
    const double bracket = 1.0 - static_cast<double>(2 * n + 1) * bn * one - bn * bn * beta;
    return beta * bracket / (one * one * one);
  }
  // Near beta^n = 1 the bracket cancels down to (1-beta)^3 scale. Swapping the
  // double sum leaves only positive terms: sum_s beta^(n-s) (1 + ... + beta^s)^2.
  double geometric = 0.0;
  double power = 1.0;
  double total = 0.0;
  for (long s = 0; s < n; ++s, power *= beta) {
    geometric += power;
    total += ipow(beta, n - s) * geometric * geometric;
  }
  return total;
}

CorrectionTerm correction_closed_heavyball(const OptimizerSpec& spec, const LossModel& loss,
                                           const ParamVector& theta, long n, bool asymptotic) {
  require_n(n);
  const double b = spec.beta1;
  const double one = 1.0 - b;
  const double coef = asymptotic ? b / (one * one * one) : heavyball_finite_n_coefficient(b, n);
  const ParamVector hg = loss.hvp(theta, loss.grad(theta));
  return make_term(spec.h * coef * hg, n,
                   asymptotic ? CorrectionMethod::ClosedFormAsymptotic : CorrectionMethod::ClosedFormFiniteN);
}

CorrectionTerm correction_closed_nesterov(const OptimizerSpec& spec, const LossModel& loss,
                                          const ParamVector& theta, long n, bool asymptotic) {
  require_n(n);
  const double b = spec.beta1;
  const double one = 1.0 - b;
  double coef = b * b / (one * one * one);
  if (!asymptotic) {
    // F^(s)(theta) = (1 - b^(s+2)) / (1 - b) grad L and the lag weight of the
    // k-th past gradient is b^(k+1).
    const double tail = static_cast<double>(n) * ipow(b, n + 1) - ipow(b, n + 2) * (1.0 - ipow(b, n)) / one;
    coef = b * weighted_power_sum(b, n) / one - b * b * tail / (one * one);
  }
  const ParamVector hg = loss.hvp(theta, loss.grad(theta));
  return make_term(spec.h * coef * hg, n,
                   asymptotic ? CorrectionMethod::ClosedFormAsymptotic : CorrectionMethod::ClosedFormFiniteN);
}

CorrectionTerm correction_closed_adamw(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                       long n, bool asymptotic) {
  return adam_family(spec, loss, theta, n, asymptotic, false);
}

CorrectionTerm correction_closed_nadamw(const OptimizerSpec& spec, const LossModel& loss,
                                        const ParamVector& theta, long n, bool asymptotic) {
  return adam_family(spec, loss, theta, n, asymptotic, true);
}

CorrectionTerm correction_closed_lionk(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                       long n, bool asymptotic) {
  require_n(n);
  if (spec.kspec == KSpec::Sign) throw NonSmooth("Lion correction needs a smooth K; kspec 'sign' has no Hessian");
  const double rho1 = spec.beta1;
  const double rho2 = spec.beta2;
  const double eps = spec.eps;
  const ParamVector g = loss.grad(theta);
  const auto method = asymptotic ? CorrectionMethod::ClosedFormAsymptotic : CorrectionMethod::ClosedFormFiniteN;

  if (asymptotic || spec.bias_correction) {
    // With bias correction every F^(s)(theta) equals the limit, so only the
    // scalar coefficient depends on n.
    double coef = rho1 / (1.0 - rho2);
    if (!asymptotic) {
      coef -= static_cast<double>(n + 1) * ipow(rho2, n) * rho1 / (1.0 - ipow(rho2, n + 1));
    }
    const ParamVector x = -g;
    const ParamVector v = -grad_K(spec.kspec, eps, x) + spec.lambda * theta;
    return make_term(spec.h * coef * hess_K(spec.kspec, eps, x, loss.hvp(theta, v)), n, method);
  }

  // Plain Lion: F^(s)(theta) = -grad K(-(1 - rho1 rho2^s) grad L) + lambda theta.
  ParamVector v = ParamVector::Zero(theta.size());
  for (long s = 0; s < n; ++s) {
    const double w = ipow(rho2, n - s - 1) * (1.0 - ipow(rho2, s + 1)) / (1.0 - rho2);
    const ParamVector Fs = -grad_K(spec.kspec, eps, -(1.0 - rho1 * ipow(rho2, s)) * g) + spec.lambda * theta;
    v += w * Fs;
  }
  const ParamVector x = -(1.0 - rho1 * ipow(rho2, n)) * g;
  return make_term(spec.h * rho1 * (1.0 - rho2) * hess_K(spec.kspec, eps, x, loss.hvp(theta, v)), n, method);
}

bool has_closed_finite_n(const OptimizerSpec& spec) {
  switch (spec.kind) {
    case OptimizerKind::HeavyBall:
    case OptimizerKind::Nesterov:
      return true;
    case OptimizerKind::AdamW:
    case OptimizerKind::NAdamW:
      return spec.bias_correction;
    case OptimizerKind::LionK:
    case OptimizerKind::Signum:
      return spec.kspec != KSpec::Sign;
  }
  return false;
}

CorrectionTerm correction_closed(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                 long n, bool asymptotic) {
  switch (spec.kind) {
    case OptimizerKind::HeavyBall: return correction_closed_heavyball(spec, loss, theta, n, asymptotic);
    case OptimizerKind::Nesterov: return correction_closed_nesterov(spec, loss, theta, n, asymptotic);
    case OptimizerKind::AdamW: return correction_closed_adamw(spec, loss, theta, n, asymptotic);
    case OptimizerKind::NAdamW: return correction_closed_nadamw(spec, loss, theta, n, asymptotic);
    case OptimizerKind::LionK:
    case OptimizerKind::Signum: return correction_closed_lionk(spec, loss, theta, n, asymptotic);
  }
  throw Error("correction_closed: unknown optimizer kind");
}

CorrectionTerm correction_for_step(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                   long n, CorrectionVariant variant) {
  if (variant == CorrectionVariant::Asymptotic) return correction_closed(spec, loss, theta, n, true);
  if (has_closed_finite_n(spec)) return correction_closed(spec, loss, theta, n, false);
  return correction_contraction(spec, loss, theta, n);
}

double signum_adam_identity_gap(double beta, const LossModel& loss, const ParamVector& theta, double eps,
                                double lambda, double h) {
  const OptimizerSpec adam = OptimizerSpec::adamw(h, beta, beta, lambda, eps);
  const OptimizerSpec lion = OptimizerSpec::signum(h, beta, lambda, eps);
  const ParamVector a = correction_closed_adamw(adam, loss, theta, 0, true).vector;
  const ParamVector b = correction_closed_lionk(lion, loss, theta, 0, true).vector;
  const double scale = std::max(linf_norm(a), linf_norm(b));
  return scale == 0.0 ? 0.0 : linf_distance(a, b) / scale;
}

double heavyball_modified_loss(double beta, double h, const LossModel& loss, const ParamVector& theta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw Error("heavyball_modified_loss: beta must lie in [0, 1)");
  const double one = 1.0 - beta;
  return loss.value(theta) + h * beta / (2.0 * one * one) * loss.grad(theta).squaredNorm();
}

std::string correction_table_csv(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                 const std::vector<long>& ns) {
  std::ostringstream out;
  out << "method,kind,n,component,value\n";
  auto emit = [&](const CorrectionTerm& t) {
    for (Index i = 0; i < t.vector.size(); ++i) {
      out << to_string(t.method) << ',' << to_string(spec.kind) << ',' << t.n << ',' << i << ','
          << format_double(t.vector[i]) << '\n';
    }
  };
  for (long n : ns) {
    emit(correction_bruteforce(spec, loss, theta, n));
    emit(correction_contraction(spec, loss, theta, n));
    if (has_closed_finite_n(spec)) emit(correction_closed(spec, loss, theta, n, false));
    emit(correction_closed(spec, loss, theta, n, true));
  }
  return out.str();
}

}  // namespace memlens
