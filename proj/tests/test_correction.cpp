#include "memlens/correction.hpp"
#include "memlens/optimizer.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace memlens;

namespace {

LossPtr quadratic(Index d, std::uint64_t seed, double eig_min = 0.1, double eig_max = 1.0) {
  LossSpec spec;
  spec.params["eig_min"] = eig_min;
  spec.params["eig_max"] = eig_max;
  return build_loss(spec, d, seed);
}

LossPtr quartic(Index d) { return make_scalar_quartic(1.0, d); }

std::vector<OptimizerSpec> smooth_specs() {
  return {OptimizerSpec::heavy_ball(0.01, 0.9),
          OptimizerSpec::nesterov(0.01, 0.8),
          OptimizerSpec::adamw(0.01, 0.9, 0.99, 0.1, 1e-3, true),
          OptimizerSpec::adamw(0.01, 0.8, 0.95, 0.0, 1e-3, false),
          OptimizerSpec::nadamw(0.01, 0.9, 0.99, 0.05, 1e-3, true),
          OptimizerSpec::lion_k(0.01, 0.9, 0.99, 0.1, 1e-3),
          OptimizerSpec::lion_k(0.01, 0.8, 0.95, 0.0, 1e-3, KSpec::SmoothedOneNorm, true)};
}

double closed_gap(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta, long n) {
  const ParamVector brute = correction_bruteforce(spec, loss, theta, n).vector;
  const ParamVector closed = correction_closed(spec, loss, theta, n, false).vector;
  return (closed - brute).lpNorm<Eigen::Infinity>() / (brute.lpNorm<Eigen::Infinity>() + 1e-12);
}

}  // namespace

TEST(Correction, BruteForceMatchesDefinitionByFiniteDifferences) {
  const auto loss = quadratic(4, 2);
  const auto quart = quartic(4);
  Rng rng(2, 0);
  for (const auto& spec : smooth_specs()) {
    for (long n : {1L, 3L, 12L}) {
      const ParamVector theta = oracle::random_point(rng, 4, 1.0);
      EXPECT_LE(oracle::rel_gap(correction_bruteforce(spec, *loss, theta, n).vector,
                                oracle::correction(spec, *loss, theta, n)),
                1e-6)
          << to_string(spec.kind) << " n=" << n;
      EXPECT_LE(oracle::rel_gap(correction_bruteforce(spec, *quart, theta, n).vector,
                                oracle::correction(spec, *quart, theta, n)),
                1e-6)
          << to_string(spec.kind) << " quartic n=" << n;
    }
  }
}

TEST(Correction, ContractionEqualsBruteForce) {
  const auto loss = quadratic(5, 3);
  Rng rng(3, 0);
  for (const auto& spec : smooth_specs()) {
    for (long n : {0L, 1L, 7L, 60L}) {
      const ParamVector theta = oracle::random_point(rng, 5, 1.0);
      const ParamVector brute = correction_bruteforce(spec, *loss, theta, n).vector;
      EXPECT_LE((correction_contraction(spec, *loss, theta, n).vector - brute).lpNorm<Eigen::Infinity>(),
                1e-12 * std::max(1.0, brute.lpNorm<Eigen::Infinity>()))
          << to_string(spec.kind) << " n=" << n;
    }
  }
}

TEST(Correction, ClosedFiniteNMatchesBruteForce) {
  const auto loss = quadratic(6, 4);
  const auto quart = quartic(6);
  Rng rng(4, 0);
  for (const auto& spec : smooth_specs()) {
    if (!has_closed_finite_n(spec)) continue;
    for (long n : {1L, 5L, 50L, 200L}) {
      for (int trial = 0; trial < 3; ++trial) {
        const ParamVector theta = oracle::random_point(rng, 6, 1.0);
        EXPECT_LE(closed_gap(spec, *loss, theta, n), 1e-6) << to_string(spec.kind) << " n=" << n;
        EXPECT_LE(closed_gap(spec, *quart, theta, n), 1e-6) << to_string(spec.kind) << " quartic n=" << n;
      }
    }
  }
}

TEST(Correction, AsymptoticFormsAgreeAtLargeN) {
  const auto loss = quadratic(5, 5);
  Rng rng(5, 0);
  for (auto spec : smooth_specs()) {
    if (spec.kind == OptimizerKind::AdamW || spec.kind == OptimizerKind::NAdamW) spec.beta2 = 0.9;
    if (spec.kind == OptimizerKind::LionK) spec.beta2 = 0.9;
    const ParamVector theta = oracle::random_point(rng, 5, 1.0);
    const ParamVector brute = correction_bruteforce(spec, *loss, theta, 200).vector;
    const ParamVector limit = correction_closed(spec, *loss, theta, 200, true).vector;
    EXPECT_LE(oracle::rel_gap(limit, brute), 1e-4) << to_string(spec.kind);
  }
}

TEST(Correction, ZeroAtNZero) {
  const auto loss = quadratic(3, 1);
  for (const auto& spec : smooth_specs())
    EXPECT_EQ(correction_bruteforce(spec, *loss, ParamVector::Ones(3), 0).vector, ParamVector::Zero(3));
}

TEST(Correction, HeavyBallFirstStepHandValue) {
  // d = 1, grad = a theta: c^(1) = h beta a^2 theta.
  const double a = 1.7, h = 0.03, beta = 0.6, theta = 0.8;
  const auto loss = make_quadratic(Matrix::Constant(1, 1, a), ParamVector::Zero(1));
  const auto spec = OptimizerSpec::heavy_ball(h, beta);
  const ParamVector th = ParamVector::Constant(1, theta);
  const double expected = h * beta * a * a * theta;
  EXPECT_NEAR(correction_bruteforce(spec, *loss, th, 1).vector[0], expected, 1e-15);
  EXPECT_NEAR(correction_closed_heavyball(spec, *loss, th, 1, false).vector[0], expected, 1e-15);
}

TEST(Correction, HeavyBallCoefficientMatchesDoubleSum) {
  for (double beta : {0.3, 0.9, 0.99, 0.999}) {
    for (long n : {1L, 2L, 7L, 60L, 500L}) {
      double naive = 0.0;
      for (long k = 1; k <= n; ++k)
        for (long s = n - k; s < n; ++s) naive += std::pow(beta, k) * (1 - std::pow(beta, s + 1)) / (1 - beta);
      EXPECT_NEAR(heavyball_finite_n_coefficient(beta, n), naive, 1e-12 * naive) << beta << " n=" << n;
    }
    EXPECT_NEAR(heavyball_finite_n_coefficient(beta, 1), beta, 1e-15);
  }
  EXPECT_EQ(heavyball_finite_n_coefficient(0.9, 0), 0.0);
}

TEST(Correction, HeavyBallAsymptoticHandValue) {
  const auto loss = make_quadratic(Matrix::Ones(1, 1), ParamVector::Zero(1));
  const auto spec = OptimizerSpec::heavy_ball(0.01, 0.5);
  const ParamVector th = ParamVector::Ones(1);
  EXPECT_NEAR(correction_closed_heavyball(spec, *loss, th, 0, true).vector[0], 0.04, 1e-15);
  EXPECT_NEAR(correction_bruteforce(spec, *loss, th, 200).vector[0], 0.04, 1e-12);
}

TEST(Correction, NoMemoryNoCorrection) {
  const auto loss = quadratic(3, 2);
  const ParamVector th = ParamVector::Constant(3, 0.4);
  EXPECT_EQ(linf_norm(correction_closed_heavyball(OptimizerSpec::heavy_ball(0.1, 0.0), *loss, th, 5, false).vector), 0.0);
  EXPECT_EQ(linf_norm(correction_closed_nesterov(OptimizerSpec::nesterov(0.1, 0.0), *loss, th, 5, true).vector), 0.0);
  EXPECT_EQ(linf_norm(correction_bruteforce(OptimizerSpec::heavy_ball(0.1, 0.0), *loss, th, 5).vector), 0.0);
}

TEST(Correction, NesterovIsBetaTimesHeavyBall) {
  const auto loss = quadratic(4, 6);
  Rng rng(6, 0);
  const ParamVector th = oracle::random_point(rng, 4, 1.0);
  for (double beta : {0.3, 0.9}) {
    const ParamVector hb = correction_closed_heavyball(OptimizerSpec::heavy_ball(0.02, beta), *loss, th, 0, true).vector;
    const ParamVector nes = correction_closed_nesterov(OptimizerSpec::nesterov(0.02, beta), *loss, th, 0, true).vector;
    EXPECT_LE(oracle::rel_gap(nes, beta * hb), 1e-14);
  }
}

TEST(Correction, AdamLeadingCoefficientExample) {
  // beta1/(1-beta1) - beta2/(1-beta2) at (0.9, 0.95).
  EXPECT_NEAR(0.9 / 0.1 - 0.95 / 0.05, -10.0, 1e-12);
  // Equal betas cancel the leading term: with eps -> 0 and lambda = 0 the correction vanishes.
  const auto loss = quadratic(4, 7);
  const ParamVector th = ParamVector::Constant(4, 0.9);
  double prev = std::numeric_limits<double>::infinity();
  for (double eps : {1e-4, 1e-6, 1e-8, 1e-10}) {
    const auto spec = OptimizerSpec::adamw(0.01, 0.9, 0.9, 0.0, eps, false);
    const double size = linf_norm(correction_closed_adamw(spec, *loss, th, 0, true).vector);
    EXPECT_LT(size, prev);
    prev = size;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(Correction, LionShrinksWithEps) {
  const auto loss = quadratic(4, 8);
  const ParamVector th = ParamVector::Constant(4, 0.9);
  std::vector<double> sizes;
  for (double eps : {1e-4, 1e-5, 1e-6}) {
    const auto spec = OptimizerSpec::lion_k(0.01, 0.9, 0.99, 0.0, eps);
    sizes.push_back(linf_norm(correction_closed_lionk(spec, *loss, th, 0, true).vector));
  }
  // Roughly linear in eps once gradients dominate sqrt(eps).
  EXPECT_NEAR(sizes[0] / sizes[1], 10.0, 1.0);
  EXPECT_NEAR(sizes[1] / sizes[2], 10.0, 1.0);
}

TEST(Correction, LionHalfSquaredMatchesHeavyBall) {
  // Lion at step h / (1 - beta) moves like heavy-ball at step h, so the
  // products (step * correction) coincide.
  const auto loss = quadratic(5, 9);
  Rng rng(9, 0);
  const ParamVector th = oracle::random_point(rng, 5, 1.0);
  const double h = 0.02, beta = 0.8;
  const auto hb = OptimizerSpec::heavy_ball(h, beta);
  const auto lion = OptimizerSpec::lion_k(h / (1 - beta), beta, beta, 0.0, 1e-8, KSpec::HalfSquaredTwoNorm);
  for (long n : {1L, 10L}) {
    EXPECT_LE(oracle::rel_gap(lion.h * correction_closed_lionk(lion, *loss, th, n, false).vector,
                              h * correction_bruteforce(hb, *loss, th, n).vector),
              1e-12);
  }
  EXPECT_LE(oracle::rel_gap(lion.h * correction_closed_lionk(lion, *loss, th, 0, true).vector,
                            h * correction_closed_heavyball(hb, *loss, th, 0, true).vector),
            1e-12);
}

TEST(Correction, LinearInH) {
  const auto loss = quadratic(4, 10);
  Rng rng(10, 0);
  const ParamVector th = oracle::random_point(rng, 4, 1.0);
  for (const auto& spec : smooth_specs()) {
    const ParamVector c1 = correction_bruteforce(spec, *loss, th, 9).vector;
    const ParamVector c2 = correction_bruteforce(spec.with_h(2 * spec.h), *loss, th, 9).vector;
    // Doubling a double is exact, so the scaled sums agree to rounding.
    EXPECT_LE((c2 - 2 * c1).lpNorm<Eigen::Infinity>(), 1e-15 * std::max(1.0, c1.lpNorm<Eigen::Infinity>()) * 4)
        << to_string(spec.kind);
  }
}

TEST(Correction, AdamStationarity) {
  Rng rng(11, 0);
  Matrix A = random_spd(5, 0.1, 1.0, rng);
  ParamVector b = oracle::random_point(rng, 5, 1.0);
  const auto loss = make_quadratic(A, b);
  const ParamVector minimizer = A.ldlt().solve(b);
  const auto spec = OptimizerSpec::adamw(0.01, 0.9, 0.99, 0.0, 1e-6, true);
  // The solve leaves a gradient of order 1e-16, amplified by 1/sqrt(eps).
  for (long n : {1L, 20L}) EXPECT_LE(linf_norm(correction_bruteforce(spec, *loss, minimizer, n).vector), 1e-9);
  EXPECT_LE(linf_norm(correction_closed_adamw(spec, *loss, minimizer, 0, true).vector), 1e-9);
  for (int trial = 0; trial < 20; ++trial) {
    const ParamVector th = oracle::random_point(rng, 5, 1.0);
    EXPECT_GT(linf_norm(correction_closed_adamw(spec, *loss, th, 0, true).vector), 1e-6);
  }
  const auto hb = OptimizerSpec::heavy_ball(0.01, 0.9);
  EXPECT_LE(linf_norm(correction_bruteforce(hb, *loss, minimizer, 10).vector), 1e-15);
}

TEST(Correction, DecayingSumsVanish) {
  // sum_{k=1}^n a_k sum_{s=n-k}^{n-1} b_s with a_k = rho2^(k-1), b_s = rho1 rho2^s.
  for (double rho2 : {0.5, 0.8, 0.9}) {
    const double rho1 = 0.7;
    auto value = [&](long n) {
      double total = 0;
      for (long k = 1; k <= n; ++k) {
        double inner = 0;
        for (long s = n - k; s <= n - 1; ++s) inner += rho1 * std::pow(rho2, static_cast<double>(s));
        total += std::pow(rho2, k - 1.0) * inner;
      }
      return total;
    };
    const double initial = value(1);
    double prev = value(50);
    for (long n = 51; n <= 120; ++n) {
      const double v = value(n);
      EXPECT_LT(v, prev) << rho2 << " " << n;
      prev = v;
    }
    EXPECT_LE(value(2000), 1e-6 * initial);
  }
}

TEST(Correction, SignumAdamIdentity) {
  const auto loss = quadratic(6, 12);
  Rng rng(12, 0);
  for (double beta : {0.0, 0.5, 0.9, 0.99}) {
    for (double lambda : {0.0, 0.1}) {
      for (int trial = 0; trial < 5; ++trial) {
        const ParamVector th = oracle::random_point(rng, 6, 1.0);
        EXPECT_LE(signum_adam_identity_gap(beta, *loss, th, 1e-3, lambda), 1e-12) << beta;
      }
    }
  }
}

TEST(Correction, NonSmoothLionRejected) {
  const auto spec = OptimizerSpec::lion_k(0.01, 0.9, 0.99, 0.0, 1e-8, KSpec::Sign);
  const auto loss = quadratic(2, 1);
  EXPECT_THROW(correction_bruteforce(spec, *loss, ParamVector::Ones(2), 3), NonSmooth);
  EXPECT_THROW(correction_closed(spec, *loss, ParamVector::Ones(2), 3, true), NonSmooth);
}

TEST(Correction, AdamFiniteNNeedsBiasCorrection) {
  const auto spec = OptimizerSpec::adamw(0.01, 0.9, 0.99, 0.0, 1e-3, false);
  EXPECT_FALSE(has_closed_finite_n(spec));
  EXPECT_THROW(correction_closed_adamw(spec, *quadratic(2, 1), ParamVector::Ones(2), 3, false), Error);
  // The memoryless step falls back to the exact contraction.
  const auto step = correction_for_step(spec, *quadratic(2, 1), ParamVector::Ones(2), 3, CorrectionVariant::FiniteN);
  EXPECT_EQ(step.method, CorrectionMethod::Contraction);
}

TEST(Correction, HeavyBallModifiedLossGradient) {
  // grad of L + h beta/(2(1-beta)^2) |grad L|^2 equals (1-beta) (F_inf + c_inf).
  const auto loss = quadratic(4, 13);
  Rng rng(13, 0);
  const ParamVector th = oracle::random_point(rng, 4, 1.0);
  const double beta = 0.7, h = 0.05;
  const auto spec = OptimizerSpec::heavy_ball(h, beta);
  const ParamVector drift = eval_F_limit(spec, *loss, th) + correction_closed_heavyball(spec, *loss, th, 0, true).vector;
  ParamVector fd(4);
  for (Index i = 0; i < 4; ++i) {
    ParamVector p = th, m = th;
    p[i] += 1e-5;
    m[i] -= 1e-5;
    fd[i] = (heavyball_modified_loss(beta, h, *loss, p) - heavyball_modified_loss(beta, h, *loss, m)) / 2e-5;
  }
  EXPECT_LE(oracle::rel_gap(fd, (1 - beta) * drift), 1e-8);
}

TEST(Correction, TableCsvListsMethods) {
  const auto csv = correction_table_csv(OptimizerSpec::heavy_ball(0.01, 0.9), *quadratic(2, 1), ParamVector::Ones(2),
                                        {1, 5});
  EXPECT_EQ(csv.rfind("method,kind,n,component,value\n", 0), 0u);
  for (const char* m : {"bruteforce", "contraction"}) EXPECT_NE(csv.find(m), std::string::npos) << m;
}
