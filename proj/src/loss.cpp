#include "memlens/loss.hpp"

#include <algorithm>
#include <cmath>

namespace memlens {

bool LossModel::in_domain(const ParamVector& theta) const {
  return all_finite(theta) && linf_norm(theta) < radius_;
}

void LossModel::require_in_domain(const ParamVector& theta, const std::string& where) const {
  if (!all_finite(theta)) throw DomainExit("non-finite iterate at " + where);
  if (!in_domain(theta)) {
    throw DomainExit("iterate left the domain ||theta||_inf < " + std::to_string(radius_) + " at " + where);
  }
}

namespace {

class QuadraticLoss final : public LossModel {
 public:
  QuadraticLoss(Matrix A, ParamVector b, double radius) : LossModel(radius), A_(std::move(A)), b_(std::move(b)) {}

  Index dim() const override { return b_.size(); }
  double value(const ParamVector& theta) const override {
    return 0.5 * theta.dot(A_ * theta) - b_.dot(theta);
  }
  ParamVector grad(const ParamVector& theta) const override { return A_ * theta - b_; }
  ParamVector hvp(const ParamVector&, const ParamVector& v) const override { return A_ * v; }
  std::string name() const override { return "quadratic"; }

 private:
  Matrix A_;
  ParamVector b_;
};

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class LogisticLoss final : public LossModel {
 public:
  LogisticLoss(Matrix X, ParamVector y, double ridge, double radius)
      : LossModel(radius), X_(std::move(X)), y_(std::move(y)), ridge_(ridge) {}

  Index dim() const override { return X_.cols(); }

  double value(const ParamVector& theta) const override {
    const ParamVector margins = y_.cwiseProduct(X_ * theta);
    double total = 0.0;
    for (Index i = 0; i < margins.size(); ++i) total += softplus(-margins[i]);
    return total / static_cast<double>(X_.rows()) + 0.5 * ridge_ * theta.squaredNorm();
  }

  ParamVector grad(const ParamVector& theta) const override {
    const ParamVector margins = y_.cwiseProduct(X_ * theta);
    ParamVector weights(margins.size());
    for (Index i = 0; i < margins.size(); ++i) weights[i] = -y_[i] * sigmoid(-margins[i]);
    return X_.transpose() * weights / static_cast<double>(X_.rows()) + ridge_ * theta;
  }

  ParamVector hvp(const ParamVector& theta, const ParamVector& v) const override {
    const ParamVector margins = y_.cwiseProduct(X_ * theta);
    ParamVector curvature(margins.size());
    for (Index i = 0; i < margins.size(); ++i) {
      const double s = sigmoid(margins[i]);
      curvature[i] = s * (1.0 - s);
    }
    const ParamVector Xv = X_ * v;
    return X_.transpose() * curvature.cwiseProduct(Xv) / static_cast<double>(X_.rows()) + ridge_ * v;
  }

  std::string name() const override { return "logistic"; }

 private:
  Matrix X_;
  ParamVector y_;
  double ridge_;
};

class QuarticLoss final : public LossModel {
 public:
  QuarticLoss(double a, Index dim, double radius) : LossModel(radius), a_(a), dim_(dim) {}

  Index dim() const override { return dim_; }
  double value(const ParamVector& theta) const override { return 0.25 * a_ * theta.array().pow(4).sum(); }
  ParamVector grad(const ParamVector& theta) const override { return a_ * theta.array().cube().matrix(); }
  ParamVector hvp(const ParamVector& theta, const ParamVector& v) const override {
    return (3.0 * a_ * theta.array().square() * v.array()).matrix();
  }
  std::string name() const override { return "quartic"; }

 private:
  double a_;
  Index dim_;
};

}  // namespace

LossPtr make_quadratic(Matrix A, ParamVector b, double radius) {
  if (A.rows() != A.cols() || A.rows() != b.size() || b.size() < 1) {
    throw Error("quadratic: A must be d x d and b of length d >= 1");
  }
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) throw Error("quadratic: A is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(A, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= 0.0) throw Error("quadratic: A is not positive definite");
  return std::make_shared<QuadraticLoss>(std::move(A), std::move(b), radius);
}

LossPtr make_logistic(Matrix X, ParamVector y, double ridge, double radius) {
  if (X.rows() < 1 || X.cols() < 1) throw Error("logistic: need m, d >= 1");
  if (X.rows() != y.size()) throw Error("logistic: X has " + std::to_string(X.rows()) + " rows but y has " +
                                        std::to_string(y.size()) + " labels");
  for (Index i = 0; i < y.size(); ++i) {
    if (y[i] != 1.0 && y[i] != -1.0) throw Error("logistic: label " + std::to_string(i) + " is not +-1");
  }
  if (!(ridge >= 0.0)) throw Error("logistic: ridge must be >= 0");
  return std::make_shared<LogisticLoss>(std::move(X), std::move(y), ridge, radius);
}

LossPtr make_scalar_quartic(double a, Index dim, double radius) {
  if (!(a > 0.0)) throw Error("quartic: a must be > 0");
  if (dim < 1) throw Error("quartic: dim must be >= 1");
  return std::make_shared<QuarticLoss>(a, dim, radius);
}

Matrix assemble_hessian(const LossModel& loss, const ParamVector& theta) {
  const Index d = loss.dim();
  Matrix H(d, d);
  for (Index j = 0; j < d; ++j) H.col(j) = loss.hvp(theta, ParamVector::Unit(d, j));
  return H;
}

double max_relative_error(const ParamVector& approx, const ParamVector& exact, double floor) {
  double worst = 0.0;
  for (Index i = 0; i < exact.size(); ++i) {
    const double denom = std::max(std::abs(exact[i]), floor);
    worst = std::max(worst, std::abs(approx[i] - exact[i]) / denom);
  }
  return worst;
}

double fd_check_grad(const LossModel& loss, const ParamVector& theta, double step) {
  const Index d = loss.dim();
  ParamVector fd(d);
  for (Index i = 0; i < d; ++i) {
    ParamVector plus = theta;
    ParamVector minus = theta;
    plus[i] += step;
    minus[i] -= step;
    fd[i] = (loss.value(plus) - loss.value(minus)) / (2.0 * step);
  }
  return max_relative_error(fd, loss.grad(theta));
}

double fd_check_hvp(const LossModel& loss, const ParamVector& theta, const ParamVector& v, double step) {
  const ParamVector fd = (loss.grad(theta + step * v) - loss.grad(theta - step * v)) / (2.0 * step);
  return max_relative_error(fd, loss.hvp(theta, v));
}

Matrix random_spd(Index d, double eig_min, double eig_max, Rng& rng) {
  Matrix G(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) G(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(G);
  const Matrix Q = qr.householderQ();
  ParamVector eigs(d);
  for (Index i = 0; i < d; ++i) {
    const double frac = d == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(d - 1);
    eigs[i] = eig_min * std::pow(eig_max / eig_min, frac);
  }
  Matrix A = Q * eigs.asDiagonal() * Q.transpose();
  return 0.5 * (A + A.transpose());
}

ParamVector MiniBatchFamily::batch_grad(std::size_t k, const ParamVector& theta) const {
  return hessians[k] * theta - offsets[k];
}

double MiniBatchFamily::batch_loss(std::size_t k, const ParamVector& theta) const {
  return 0.5 * theta.dot(hessians[k] * theta) - offsets[k].dot(theta);
}

ParamVector MiniBatchFamily::mean_grad(const ParamVector& theta) const {
  ParamVector total = ParamVector::Zero(dim());
  for (std::size_t k = 0; k < count(); ++k) total += batch_grad(k, theta);
  return total / static_cast<double>(count());
}

double MiniBatchFamily::mean_loss(const ParamVector& theta) const {
  double total = 0.0;
  for (std::size_t k = 0; k < count(); ++k) total += batch_loss(k, theta);
  return total / static_cast<double>(count());
}

Matrix MiniBatchFamily::mean_hessian() const {
  Matrix total = Matrix::Zero(dim(), dim());
  for (const auto& A : hessians) total += A;
  return total / static_cast<double>(count());
}

ParamVector MiniBatchFamily::mean_offset() const {
  ParamVector total = ParamVector::Zero(dim());
  for (const auto& b : offsets) total += b;
  return total / static_cast<double>(count());
}

LossPtr MiniBatchFamily::mean_model(double radius) const {
  return make_quadratic(mean_hessian(), mean_offset(), radius);
}

MiniBatchFamily make_minibatch_quadratics(std::size_t count, Index d, double spread, std::uint64_t seed) {
  if (count < 2) throw Error("minibatch family needs count >= 2");
  if (d < 1) throw Error("minibatch family needs d >= 1");
  Rng rng(seed, "minibatch");
  const Matrix base_hessian = random_spd(d, 0.5, 2.0, rng);
  ParamVector base_offset(d);
  for (Index i = 0; i < d; ++i) base_offset[i] = rng.normal();

  MiniBatchFamily family;
  for (std::size_t k = 0; k < count; ++k) {
    Matrix noise(d, d);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j) noise(i, j) = rng.normal();
    ParamVector offset_noise(d);
    for (Index i = 0; i < d; ++i) offset_noise[i] = rng.normal();
    const Matrix sym = 0.5 * (noise + noise.transpose()) / std::sqrt(static_cast<double>(d));
    family.hessians.push_back(base_hessian + spread * sym);
    family.offsets.push_back(base_offset + spread * offset_noise);
  }
  return family;
}

LossPtr build_loss(const LossSpec& spec, Index dim, std::uint64_t seed) {
  const double radius = spec.get("radius", 1e3);
  if (spec.id == "quadratic") {
    Rng rng(seed, "loss.quadratic");
    const Matrix A = random_spd(dim, spec.get("eig_min", 0.1), spec.get("eig_max", 1.0), rng);
    ParamVector b(dim);
    const double scale = spec.get("offset_scale", 1.0);
    for (Index i = 0; i < dim; ++i) b[i] = scale * rng.normal();
    return make_quadratic(A, b, radius);
  }
  if (spec.id == "logistic") {
    Rng rng(seed, "loss.logistic");
    const auto m = static_cast<Index>(spec.get("samples", 200));
    const double noise = spec.get("label_noise", 0.5);
    const double feature_scale = spec.get("feature_scale", 1.0);
    ParamVector truth(dim);
    for (Index i = 0; i < dim; ++i) truth[i] = rng.normal();
    Matrix X(m, dim);
    ParamVector y(m);
    for (Index r = 0; r < m; ++r) {
      for (Index c = 0; c < dim; ++c) X(r, c) = rng.normal();
      const double score = X.row(r).dot(truth) / std::sqrt(static_cast<double>(dim)) + noise * rng.normal();
      X.row(r) *= feature_scale;
      y[r] = score >= 0.0 ? 1.0 : -1.0;
    }
    return make_logistic(X, y, spec.get("ridge", 0.0), radius);
  }
  if (spec.id == "quartic") {
    return make_scalar_quartic(spec.get("quartic_a", 1.0), dim, radius);
  }
  if (spec.id == "minibatch-quadratic") {
    return build_family(spec, dim, seed).mean_model(radius);
  }
  throw Error("unknown loss.id '" + spec.id + "'");
}

MiniBatchFamily build_family(const LossSpec& spec, Index dim, std::uint64_t seed) {
  return make_minibatch_quadratics(static_cast<std::size_t>(spec.get("count", 6)), dim, spec.get("spread", 0.5),
                                   seed);
}

}  // namespace memlens
