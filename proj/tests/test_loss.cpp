#include "memlens/loss.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace memlens;

namespace {

struct Fixture {
  const char* id;
  LossPtr loss;
  double scale;  // sampling box for theta
};

std::vector<Fixture> fixtures() {
  LossSpec q, l, r, m;
  q.id = "quadratic";
  l.id = "logistic";
  r.id = "quartic";
  m.id = "minibatch-quadratic";
  return {{"quadratic", build_loss(q, 10, 1), 1.0},
          {"logistic", build_loss(l, 20, 2), 1.0},
          {"quartic", build_loss(r, 10, 3), 1.0},
          {"minibatch", build_loss(m, 5, 4), 1.0}};
}

}  // namespace

TEST(Quadratic, HandExample) {
  const auto loss = make_quadratic(Matrix::Identity(2, 2), ParamVector::Zero(2));
  ParamVector theta(2);
  theta << 1, 2;
  EXPECT_DOUBLE_EQ(loss->value(theta), 2.5);
  EXPECT_EQ(loss->grad(theta), theta);
}

TEST(Quadratic, HvpIndependentOfTheta) {
  Rng rng(2, 0);
  const auto loss = make_quadratic(random_spd(6, 0.1, 1.0, rng), ParamVector::Zero(6));
  const ParamVector v = oracle::random_point(rng, 6, 1.0);
  EXPECT_EQ(loss->hvp(oracle::random_point(rng, 6, 1.0), v), loss->hvp(oracle::random_point(rng, 6, 5.0), v));
  EXPECT_LE(fd_check_grad(*loss, oracle::random_point(rng, 6, 1.0)), 1e-7);
}

TEST(Quadratic, RejectsMismatchedShapes) {
  EXPECT_THROW(make_quadratic(Matrix::Identity(2, 2), ParamVector::Zero(3)), Error);
}

TEST(Logistic, ValueAtOriginIsLogTwo) {
  LossSpec spec;
  spec.id = "logistic";
  const auto loss = build_loss(spec, 20, 11);
  EXPECT_NEAR(loss->value(ParamVector::Zero(20)), std::log(2.0), 1e-14);
}

TEST(Logistic, GradientVanishesAlongSeparatingDirection) {
  Matrix X(4, 2);
  X << 1, 0, 2, 1, -1, 0, -2, -1;
  ParamVector y(4);
  y << 1, 1, -1, -1;
  const auto loss = make_logistic(X, y, 0.0, 1e6);
  ParamVector dir(2);
  dir << 1, 0;
  EXPECT_LT(linf_norm(loss->grad(50 * dir)), 1e-15 * linf_norm(loss->grad(10 * dir)));
  EXPECT_LT(linf_norm(loss->grad(10 * dir)), 1e-4);
}

TEST(Logistic, FeatureScaleKeepsLabels) {
  LossSpec a, b;
  a.id = b.id = "logistic";
  b.params["feature_scale"] = 0.5;
  const auto la = build_loss(a, 5, 3);
  const auto lb = build_loss(b, 5, 3);
  Rng rng(1, 0);
  const ParamVector theta = oracle::random_point(rng, 5, 1.0);
  // Scaling features by s is the same as scaling theta by s.
  EXPECT_NEAR(lb->value(theta), la->value(0.5 * theta), 1e-14);
}

TEST(Quartic, Examples) {
  const auto loss = make_scalar_quartic(1.0);
  ParamVector zero = ParamVector::Zero(1), two = ParamVector::Constant(1, 2.0), v = ParamVector::Ones(1);
  EXPECT_EQ(loss->grad(zero)[0], 0.0);
  EXPECT_EQ(loss->hvp(zero, v)[0], 0.0);
  EXPECT_DOUBLE_EQ(loss->value(two), 4.0);
  EXPECT_DOUBLE_EQ(loss->grad(two)[0], 8.0);
  EXPECT_LE(fd_check_grad(*loss, two), 1e-6);
}

TEST(FdCheck, QuadraticIsExact) {
  LossSpec spec;
  const auto loss = build_loss(spec, 10, 5);
  Rng rng(5, 1);
  const ParamVector theta = oracle::random_point(rng, 10, 1.0);
  EXPECT_LE(fd_check_grad(*loss, theta), 1e-9);
  EXPECT_LE(fd_check_hvp(*loss, theta, oracle::random_point(rng, 10, 1.0)), 1e-9);
}

TEST(FdCheck, AllFixturesWithinTolerance) {
  Rng rng(6, 0);
  for (const auto& f : fixtures()) {
    for (int trial = 0; trial < 5; ++trial) {
      const ParamVector theta = oracle::random_point(rng, f.loss->dim(), f.scale);
      const ParamVector v = oracle::random_point(rng, f.loss->dim(), 1.0);
      EXPECT_LE(fd_check_grad(*f.loss, theta), 1e-5) << f.id;
      EXPECT_LE(fd_check_hvp(*f.loss, theta, v), 1e-5) << f.id;
    }
  }
}

TEST(Hessian, SymmetricOnAllFixtures) {
  Rng rng(7, 0);
  for (const auto& f : fixtures()) {
    const Matrix H = assemble_hessian(*f.loss, oracle::random_point(rng, f.loss->dim(), f.scale));
    EXPECT_LE((H - H.transpose()).cwiseAbs().maxCoeff(), 1e-10) << f.id;
  }
}

TEST(Hessian, HvpOfGradientIsHalfGradientOfSquaredNorm) {
  Rng rng(8, 0);
  for (const auto& f : fixtures()) {
    const ParamVector theta = oracle::random_point(rng, f.loss->dim(), f.scale);
    const ParamVector exact = f.loss->hvp(theta, f.loss->grad(theta));
    ParamVector fd(theta.size());
    const double step = 1e-5;
    for (Index i = 0; i < theta.size(); ++i) {
      ParamVector p = theta, m = theta;
      p[i] += step;
      m[i] -= step;
      fd[i] = (f.loss->grad(p).squaredNorm() - f.loss->grad(m).squaredNorm()) / (4 * step);
    }
    EXPECT_LE(max_relative_error(fd, exact, 1e-8), 1e-5) << f.id;
  }
}

TEST(Domain, RequireInDomainThrowsOutside) {
  const auto loss = make_scalar_quartic(1.0, 2, 3.0);
  ParamVector inside = ParamVector::Constant(2, 2.9), outside = ParamVector::Constant(2, 3.0);
  EXPECT_NO_THROW(loss->require_in_domain(inside, "test"));
  EXPECT_THROW(loss->require_in_domain(outside, "test"), DomainExit);
  outside[0] = std::nan("");
  EXPECT_THROW(loss->require_in_domain(outside, "test"), DomainExit);
}

TEST(RandomSpd, SpectrumWithinRange) {
  Rng rng(3, 0);
  const Matrix A = random_spd(8, 0.01, 1.0, rng);
  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  EXPECT_NEAR(es.eigenvalues().minCoeff(), 0.01, 1e-12);
  EXPECT_NEAR(es.eigenvalues().maxCoeff(), 1.0, 1e-12);
  EXPECT_LE((A - A.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MiniBatchFamily, ZeroSpreadGivesIdenticalBatches) {
  const auto fam = make_minibatch_quadratics(4, 3, 0.0, 9);
  for (std::size_t k = 1; k < fam.count(); ++k) {
    EXPECT_EQ(fam.hessians[k], fam.hessians[0]);
    EXPECT_EQ(fam.offsets[k], fam.offsets[0]);
  }
}

TEST(MiniBatchFamily, MeanIsAverageOfMembers) {
  const auto fam = make_minibatch_quadratics(6, 5, 0.5, 2);
  const auto model = fam.mean_model();
  Rng rng(2, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const ParamVector theta = oracle::random_point(rng, 5, 2.0);
    ParamVector g = ParamVector::Zero(5);
    double value = 0;
    for (std::size_t k = 0; k < fam.count(); ++k) {
      g += fam.batch_grad(k, theta);
      value += fam.batch_loss(k, theta);
      EXPECT_LE(linf_distance(fam.batch_grad(k, theta), fam.hessians[k] * theta - fam.offsets[k]), 1e-14);
    }
    g /= 6.0;
    value /= 6.0;
    EXPECT_LE(linf_distance(fam.mean_grad(theta), g), 1e-12);
    EXPECT_LE(linf_distance(model->grad(theta), g), 1e-12);
    EXPECT_NEAR(model->value(theta), value, 1e-12 * std::max(1.0, std::abs(value)));
  }
}

TEST(MiniBatchFamily, SpreadIncreasesGradientVariance) {
  const ParamVector theta = ParamVector::Constant(4, 0.7);
  double prev = -1;
  for (double spread : {0.0, 0.1, 0.5, 1.0}) {
    const auto fam = make_minibatch_quadratics(6, 4, spread, 5);
    double var = 0;
    const ParamVector g = fam.mean_grad(theta);
    for (std::size_t k = 0; k < fam.count(); ++k) var += (fam.batch_grad(k, theta) - g).squaredNorm();
    EXPECT_GT(var, prev);
    prev = var;
  }
}

TEST(BuildLoss, UnknownIdIsNamed) {
  LossSpec spec;
  spec.id = "rosenbrock";
  try {
    build_loss(spec, 2, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("rosenbrock"), std::string::npos);
  }
}
