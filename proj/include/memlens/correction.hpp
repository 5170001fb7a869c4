#pragma once

#include "memlens/core.hpp"
#include "memlens/loss.hpp"

#include <string>
#include <vector>

namespace memlens {

enum class CorrectionMethod { BruteForce, Contraction, ClosedFormAsymptotic, ClosedFormFiniteN };

std::string to_string(CorrectionMethod method);

/// c^(n)(theta): the O(h) term that makes the memoryless iteration second-order
/// accurate.
struct CorrectionTerm {
  ParamVector vector;
  long n = 0;
  CorrectionMethod method = CorrectionMethod::BruteForce;
};

// Double sum over k and the inner partial sums of F^(s)(theta), one set of Q
// Jacobian-vector products per k.
CorrectionTerm correction_bruteforce(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                     long n);

// Same value with the geometric weights folded in first: Q Jacobian-vector
// products in total regardless of n.
CorrectionTerm correction_contraction(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                      long n);

// Coefficient of h * H grad L in the heavy-ball correction after n steps.
// Equals beta at n = 1 and beta / (1-beta)^3 as n grows.
double heavyball_finite_n_coefficient(double beta, long n);

CorrectionTerm correction_closed_heavyball(const OptimizerSpec& spec, const LossModel& loss,
                                           const ParamVector& theta, long n, bool asymptotic);
CorrectionTerm correction_closed_nesterov(const OptimizerSpec& spec, const LossModel& loss,
                                          const ParamVector& theta, long n, bool asymptotic);
// Finite-n forms need bias_correction; without it they throw.
CorrectionTerm correction_closed_adamw(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                       long n, bool asymptotic);
CorrectionTerm correction_closed_nadamw(const OptimizerSpec& spec, const LossModel& loss,
                                        const ParamVector& theta, long n, bool asymptotic);
CorrectionTerm correction_closed_lionk(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                       long n, bool asymptotic);

// Whether a finite-n closed form exists for this spec.
bool has_closed_finite_n(const OptimizerSpec& spec);

// Routes to the per-kind closed form.
CorrectionTerm correction_closed(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                 long n, bool asymptotic);

enum class CorrectionVariant { FiniteN, Asymptotic };

// The correction used by the memoryless iteration: the finite-n closed form
// when one exists, otherwise the contraction; or the asymptotic closed form.
CorrectionTerm correction_for_step(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                   long n, CorrectionVariant variant);

/// Relative sup-norm gap between the asymptotic Adam(beta, beta) and
/// Lion(beta, beta) corrections at theta. Zero when both vanish.
double signum_adam_identity_gap(double beta, const LossModel& loss, const ParamVector& theta, double eps,
                                double lambda, double h = 1.0);

/// L + h beta / (2 (1 - beta)^2) ||grad L||^2, the loss that plain gradient
/// descent with step h / (1 - beta) follows to second order.
double heavyball_modified_loss(double beta, double h, const LossModel& loss, const ParamVector& theta);

// Rows "method,kind,n,component,value" for every method available at each n.
std::string correction_table_csv(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                 const std::vector<long>& ns);

}  // namespace memlens
