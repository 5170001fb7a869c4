#pragma once

#include "memlens/core.hpp"

#include <memory>
#include <string>
#include <vector>

namespace memlens {

/// Differential oracle for a loss on the open box ||theta||_inf < radius.
/// Implementations are pure and reentrant.
class LossModel {
 public:
  explicit LossModel(double radius) : radius_(radius) {}
  virtual ~LossModel() = default;

  virtual Index dim() const = 0;
  virtual double value(const ParamVector& theta) const = 0;
  virtual ParamVector grad(const ParamVector& theta) const = 0;
  // Hessian at theta applied to v.
  virtual ParamVector hvp(const ParamVector& theta, const ParamVector& v) const = 0;
  virtual std::string name() const = 0;

  double domain_radius() const { return radius_; }
  bool in_domain(const ParamVector& theta) const;
  // Throws DomainExit naming `where` when theta is outside the domain or non-finite.
  void require_in_domain(const ParamVector& theta, const std::string& where) const;

 private:
  double radius_;
};

using LossPtr = std::shared_ptr<const LossModel>;

/// L(theta) = 1/2 theta^T A theta - b^T theta.
LossPtr make_quadratic(Matrix A, ParamVector b, double radius = 1e3);

/// Mean logistic loss over rows of X with labels in {-1, +1}, plus
/// ridge * ||theta||^2 / 2.
LossPtr make_logistic(Matrix X, ParamVector y, double ridge, double radius = 1e3);

/// L(theta) = a/4 * sum_i theta_i^4. The scalar fixture is dim == 1.
LossPtr make_scalar_quartic(double a, Index dim = 1, double radius = 1e3);

// Dense Hessian assembled column by column from hvp.
Matrix assemble_hessian(const LossModel& loss, const ParamVector& theta);

// Central-difference checks; worst componentwise relative error with an
// absolute floor of 1e-12 in the denominator.
double fd_check_grad(const LossModel& loss, const ParamVector& theta, double step = 1e-5);
double fd_check_hvp(const LossModel& loss, const ParamVector& theta, const ParamVector& v,
                    double step = 1e-5);
double max_relative_error(const ParamVector& approx, const ParamVector& exact, double floor = 1e-12);

// Symmetric matrix with eigenvalues log-spaced in [eig_min, eig_max] and a
// random orthogonal eigenbasis.
Matrix random_spd(Index d, double eig_min, double eig_max, Rng& rng);

/// Per-batch quadratic gradient maps g_k(theta) = A_k theta - b_k. Each A_k is
/// symmetric, so g_k is the gradient of L_k = 1/2 theta^T A_k theta - b_k^T theta.
struct MiniBatchFamily {
  std::vector<Matrix> hessians;
  std::vector<ParamVector> offsets;

  std::size_t count() const { return hessians.size(); }
  Index dim() const { return hessians.empty() ? 0 : hessians.front().rows(); }

  ParamVector batch_grad(std::size_t k, const ParamVector& theta) const;
  double batch_loss(std::size_t k, const ParamVector& theta) const;
  ParamVector mean_grad(const ParamVector& theta) const;
  double mean_loss(const ParamVector& theta) const;
  Matrix mean_hessian() const;
  ParamVector mean_offset() const;
  // The averaged loss as a LossModel.
  LossPtr mean_model(double radius = 1e3) const;
};

/// `count` batches whose Hessians and offsets deviate from a shared SPD
/// mean by perturbations of size ~spread. Deterministic in seed.
MiniBatchFamily make_minibatch_quadratics(std::size_t count, Index d, double spread, std::uint64_t seed);

/// Builds a fixture from its config id: "quadratic", "logistic", "quartic",
/// "minibatch-quadratic" (the mean loss of the family).
LossPtr build_loss(const LossSpec& spec, Index dim, std::uint64_t seed);
MiniBatchFamily build_family(const LossSpec& spec, Index dim, std::uint64_t seed);

}  // namespace memlens
