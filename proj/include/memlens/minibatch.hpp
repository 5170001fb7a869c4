#pragma once

#include "memlens/loss.hpp"

#include <cstdint>
#include <vector>

namespace memlens {

/// Weights of the same-batch and cross-batch expectations in the
/// permutation-averaged heavy-ball correction over n + 1 batches.
struct PermutationCoefficients {
  double c_eq = 0.0;
  double c_neq = 0.0;
  long n = 0;
  bool asymptotic = false;
  double beta = 0.0;
};

PermutationCoefficients perm_coefficients(double beta, long n);
PermutationCoefficients perm_coefficients_limit(double beta);

/// c^(n)(theta) for one ordering: batch perm[j] is used at step j, and
/// n + 1 = family.count().
ParamVector permutation_correction(const MiniBatchFamily& family, const std::vector<int>& perm, double beta,
                                   const ParamVector& theta, double h);

// Largest family the exhaustive average accepts.
inline constexpr std::size_t kMaxExhaustiveBatches = 7;

/// Exact average over all (n + 1)! orderings. The parallel kernel reduces
/// fixed chunks in index order, so its result does not depend on the number
/// of threads; the serial version is the plain reference loop.
ParamVector expected_correction_exhaustive(const MiniBatchFamily& family, double beta, const ParamVector& theta,
                                           double h);
ParamVector expected_correction_exhaustive_serial(const MiniBatchFamily& family, double beta,
                                                  const ParamVector& theta, double h);

struct McEstimate {
  ParamVector mean;
  ParamVector stderr_;
  long samples = 0;
};

/// Sample mean over uniformly drawn orderings (Fisher-Yates; sample i draws
/// from stream i of the seed) with componentwise standard errors.
McEstimate expected_correction_mc(const MiniBatchFamily& family, double beta, const ParamVector& theta, double h,
                                  long samples, std::uint64_t seed);
McEstimate expected_correction_mc_serial(const MiniBatchFamily& family, double beta, const ParamVector& theta,
                                         double h, long samples, std::uint64_t seed);

// Ordering drawn for Monte Carlo sample `index`.
std::vector<int> sample_permutation(std::size_t count, std::uint64_t seed, std::uint64_t index);

/// E[A_i g_i] over one batch and E[A_i g_j] over ordered pairs i != j, at theta.
struct BatchExpectations {
  ParamVector same;
  ParamVector cross;
};

BatchExpectations batch_expectations(const MiniBatchFamily& family, const ParamVector& theta);

// h (c_eq same + c_neq cross) with the finite-n coefficients.
ParamVector decomposed_correction(const MiniBatchFamily& family, double beta, const ParamVector& theta, double h);

// E ||g_i - g||^2 over batches.
double gradient_noise(const MiniBatchFamily& family, const ParamVector& theta);

/// L + h beta / (2 (1-beta)^2) ||grad L||^2 + h beta / (2 (1-beta)(1+beta)) E||g_i - g||^2.
double modified_loss_minibatch(const MiniBatchFamily& family, double beta, const ParamVector& theta, double h);

/// Large-n expected memoryless drift
/// g/(1-beta) + h [beta/(1-beta)^3 A g + c_eq(inf) E[(A_i - A)(g_i - g)]],
/// with A the mean Hessian and g the mean gradient.
ParamVector expected_drift_asymptotic(const MiniBatchFamily& family, double beta, const ParamVector& theta,
                                      double h);

}  // namespace memlens
