#include "memlens/optimizer.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace memlens;

namespace {

LossPtr quadratic(Index d, std::uint64_t seed) {
  LossSpec spec;
  return build_loss(spec, d, seed);
}

LossPtr logistic(Index d, std::uint64_t seed) {
  LossSpec spec;
  spec.id = "logistic";
  return build_loss(spec, d, seed);
}

std::vector<OptimizerSpec> all_specs(double h) {
  return {OptimizerSpec::heavy_ball(h, 0.9),
          OptimizerSpec::nesterov(h, 0.8),
          OptimizerSpec::adamw(h, 0.9, 0.99, 0.1, 1e-3, true),
          OptimizerSpec::adamw(h, 0.8, 0.95, 0.0, 1e-3, false),
          OptimizerSpec::nadamw(h, 0.9, 0.99, 0.05, 1e-3, true),
          OptimizerSpec::nadamw(h, 0.7, 0.9, 0.0, 1e-3, false),
          OptimizerSpec::lion_k(h, 0.9, 0.99, 0.1, 1e-3),
          OptimizerSpec::lion_k(h, 0.8, 0.95, 0.0, 1e-3, KSpec::SmoothedOneNorm, true),
          OptimizerSpec::lion_k(h, 0.9, 0.9, 0.0, 1e-3, KSpec::HalfSquaredTwoNorm),
          OptimizerSpec::signum(h, 0.9, 0.01, 1e-3)};
}

// L = 0 everywhere.
class ConstantLoss : public LossModel {
 public:
  explicit ConstantLoss(Index d) : LossModel(1e3), d_(d) {}
  Index dim() const override { return d_; }
  double value(const ParamVector&) const override { return 0.0; }
  ParamVector grad(const ParamVector&) const override { return ParamVector::Zero(d_); }
  ParamVector hvp(const ParamVector&, const ParamVector&) const override { return ParamVector::Zero(d_); }
  std::string name() const override { return "constant"; }

 private:
  Index d_;
};

HistoryBuffer history_of(const std::vector<ParamVector>& thetas) {
  HistoryBuffer hist;
  for (const auto& t : thetas) hist.push(t);
  return hist;
}

}  // namespace

TEST(EvalFHistory, HeavyBallHandExample) {
  const auto loss = make_quadratic(Matrix::Identity(1, 1), ParamVector::Zero(1));
  const auto spec = OptimizerSpec::heavy_ball(0.1, 0.5);
  const auto hist = history_of({ParamVector::Constant(1, 1.0), ParamVector::Constant(1, 2.0)});
  EXPECT_DOUBLE_EQ(eval_F_history(spec, *loss, hist)[0], 2.5);
  const auto first = history_of({ParamVector::Constant(1, 3.0)});
  EXPECT_EQ(eval_F_history(spec, *loss, first), loss->grad(ParamVector::Constant(1, 3.0)));
}

TEST(EvalFHistory, AdamConstantGradientFixedPoint) {
  const auto loss = make_quadratic(Matrix::Identity(3, 3), ParamVector::Zero(3));
  const auto spec = OptimizerSpec::adamw(0.1, 0.9, 0.999, 0.0, 1e-4, true);
  ParamVector theta(3);
  theta << 0.5, -1.0, 2.0;
  const ParamVector g = loss->grad(theta);
  const ParamVector expected = (g.array() / (g.array().square() + 1e-4).sqrt()).matrix();
  for (long n : {0L, 1L, 7L, 40L}) EXPECT_LE(linf_distance(eval_F_constant(spec, *loss, theta, n), expected), 1e-14);
}

TEST(EvalFHistory, NAdamWithZeroBeta1IsAdam) {
  const auto loss = quadratic(4, 3);
  Rng rng(3, 0);
  std::vector<ParamVector> thetas;
  for (int k = 0; k < 6; ++k) thetas.push_back(oracle::random_point(rng, 4, 1.0));
  const auto hist = history_of(thetas);
  for (bool bias : {true, false}) {
    const auto a = OptimizerSpec::adamw(0.1, 0.0, 0.99, 0.1, 1e-4, bias);
    const auto n = OptimizerSpec::nadamw(0.1, 0.0, 0.99, 0.1, 1e-4, bias);
    EXPECT_LE(linf_distance(eval_F_history(a, *loss, hist), eval_F_history(n, *loss, hist)), 1e-15);
  }
}

TEST(EvalFHistory, MatchesDefinitionOracle) {
  const auto loss = quadratic(5, 1);
  Rng rng(1, 0);
  std::vector<ParamVector> thetas;
  for (int k = 0; k < 12; ++k) thetas.push_back(oracle::random_point(rng, 5, 1.0));
  for (const auto& spec : all_specs(0.01)) {
    for (std::size_t len = 1; len <= thetas.size(); len += 5) {
      std::vector<ParamVector> prefix(thetas.begin(), thetas.begin() + static_cast<long>(len));
      EXPECT_LE(oracle::rel_gap(eval_F_history(spec, *loss, history_of(prefix)), oracle::F(spec, *loss, prefix)),
                1e-13)
          << to_string(spec.kind) << " n=" << len - 1;
    }
  }
}

TEST(RunMemoryful, MatchesDefinitionOracle) {
  const auto loss = logistic(6, 2);
  Rng rng(2, 0);
  const ParamVector theta0 = oracle::random_point(rng, 6, 1.0);
  for (const auto& spec : all_specs(0.05)) {
    const auto traj = run_memoryful_steps(spec, loss, theta0, 40);
    const auto ref = oracle::run(spec, *loss, theta0, 40);
    ASSERT_EQ(traj.size(), ref.size());
    double gap = 0;
    for (std::size_t n = 0; n < ref.size(); ++n) gap = std::max(gap, linf_distance(traj.iterates[n], ref[n]));
    EXPECT_LE(gap, 1e-12) << to_string(spec.kind);
  }
}

TEST(RunMemoryful, StateMatchesHistoryOverManySteps) {
  const auto loss = logistic(8, 4);
  Rng rng(4, 0);
  const ParamVector theta0 = oracle::random_point(rng, 8, 1.0);
  for (auto spec : all_specs(0.02)) {
    // Random hyperparameters within each family's range.
    spec.beta1 = rng.uniform(0.5, 0.95);
    spec.beta2 = spec.kind == OptimizerKind::Signum ? spec.beta1 : rng.uniform(spec.beta1, 0.999);
    if (spec.kind == OptimizerKind::LionK && spec.kspec == KSpec::HalfSquaredTwoNorm) spec.beta2 = spec.beta1;
    const auto traj = run_memoryful_steps(spec, loss, theta0, 200);
    HistoryBuffer hist;
    ParamVector theta = theta0;
    double gap = 0;
    for (long n = 0; n < 200; ++n) {
      hist.push(theta);
      theta = theta - spec.h * eval_F_history(spec, *loss, hist);
      gap = std::max(gap, linf_distance(theta, traj.iterates[static_cast<std::size_t>(n + 1)]));
    }
    EXPECT_LE(gap, 1e-10) << to_string(spec.kind);
  }
}

TEST(RunMemoryful, WeightDecayOnlyContractsGeometrically) {
  // A constant loss leaves only the decoupled decay: theta <- (1 - h lambda) theta.
  const LossPtr loss = std::make_shared<ConstantLoss>(3);
  const auto spec = OptimizerSpec::adamw(0.1, 0.9, 0.999, 0.5, 1e-8);
  ParamVector theta0(3);
  theta0 << 1.0, -2.0, 0.5;
  const auto traj = run_memoryful_steps(spec, loss, theta0, 30);
  for (std::size_t n = 0; n < traj.size(); ++n)
    EXPECT_LE(linf_distance(traj.iterates[n], std::pow(1 - 0.05, static_cast<double>(n)) * theta0), 1e-14);
}

TEST(RunMemoryful, HeavyBallWithoutMomentumIsGradientDescent) {
  const auto loss = quadratic(4, 8);
  const ParamVector theta0 = ParamVector::Constant(4, 0.3);
  const auto traj = run_memoryful_steps(OptimizerSpec::heavy_ball(0.1, 0.0), loss, theta0, 25);
  ParamVector theta = theta0;
  for (std::size_t n = 1; n < traj.size(); ++n) {
    theta = theta - 0.1 * loss->grad(theta);
    EXPECT_EQ(traj.iterates[n], theta);
  }
}

TEST(RunMemoryful, LengthFollowsT) {
  const auto loss = quadratic(3, 1);
  const ParamVector theta0 = ParamVector::Ones(3);
  const auto spec = OptimizerSpec::heavy_ball(0.1, 0.9);
  EXPECT_EQ(run_memoryful(spec, loss, theta0, 0.05).size(), 1u);
  EXPECT_EQ(run_memoryful(spec, loss, theta0, 1.0).size(), 11u);
  EXPECT_EQ(run_memoryful(spec, loss, theta0, 2.0).size() - 1, 2 * (run_memoryful(spec, loss, theta0, 1.0).size() - 1));
}

TEST(RunMemoryful, LossDecreasesAfterBurnIn) {
  RunConfig config;
  config.dim = 10;
  config.seed = 7;
  config.T = 20;
  config.optimizer = OptimizerSpec::heavy_ball(1e-3, 0.9);
  const auto traj = run_memoryful(config);
  const std::size_t burn = 300;
  for (std::size_t n = burn + 1; n < traj.size(); ++n) EXPECT_LE(traj.loss[n], traj.loss[n - 1] + 1e-12 * std::abs(traj.loss[n - 1])) << n;
}

TEST(RunMemoryful, DomainExitStopsTheRun) {
  const auto loss = make_quadratic(Matrix::Identity(2, 2) * 10.0, ParamVector::Zero(2), 5.0);
  const auto traj = run_memoryful_steps(OptimizerSpec::heavy_ball(1.0, 0.5), loss, ParamVector::Ones(2), 50);
  EXPECT_FALSE(traj.complete());
  EXPECT_LT(traj.size(), 51u);
  for (const auto& t : traj.iterates) EXPECT_TRUE(loss->in_domain(t));
}

TEST(RunMemoryful, CsvHasHeaderAndOneRowPerIterate) {
  const auto traj = run_memoryful_steps(OptimizerSpec::heavy_ball(0.1, 0.5), quadratic(2, 1), ParamVector::Ones(2), 3);
  const std::string csv = traj.to_csv();
  EXPECT_EQ(csv.rfind("step,t,theta_0,theta_1,loss\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(MemoryDecay, InfluenceOfOldIteratesDecaysGeometrically) {
  const auto loss = logistic(5, 6);
  Rng rng(6, 0);
  const long n = 30;
  std::vector<ParamVector> thetas;
  for (long k = 0; k <= n; ++k) thetas.push_back(oracle::random_point(rng, 5, 1.0));
  for (const auto& spec : all_specs(0.01)) {
    const double rate = spec.max_decay();
    const ParamVector base = eval_F_history(spec, *loss, history_of(thetas));
    const double delta = 1e-6;
    std::vector<double> ratio;
    for (long k = 1; k <= 20; ++k) {
      auto moved = thetas;
      moved[static_cast<std::size_t>(n - k)].array() += delta;
      const double change = linf_distance(eval_F_history(spec, *loss, history_of(moved)), base) / delta;
      ratio.push_back(change / std::pow(rate, static_cast<double>(k)));
    }
    // A single constant bounds every lag.
    const double C = *std::max_element(ratio.begin(), ratio.end());
    EXPECT_LE(C, 10 * std::max(ratio.front(), 1e-3)) << to_string(spec.kind);
  }
}

TEST(HistoryBuffer, TruncationKeepsRecentIterates) {
  HistoryBuffer hist(2);
  for (int k = 0; k < 5; ++k) hist.push(ParamVector::Constant(1, k));
  EXPECT_EQ(hist.latest(), 4);
  EXPECT_EQ(hist.oldest_retained(), 2);
  EXPECT_EQ(hist.at(3)[0], 3.0);
  EXPECT_THROW(hist.at(1), Error);
}

TEST(LionHalfSquared, IsHeavyBallWithRescaledStep) {
  // With K = |x|^2 / 2 and rho1 = rho2 = beta, F_lion = (1 - beta) F_hb, so a
  // step of h / (1 - beta) retraces heavy-ball at step h.
  const auto loss = logistic(6, 9);
  const ParamVector theta0 = ParamVector::Constant(6, 0.4);
  for (double beta : {0.5, 0.9}) {
    const auto hb = run_memoryful_steps(OptimizerSpec::heavy_ball(0.05, beta), loss, theta0, 150);
    const auto lion = run_memoryful_steps(
        OptimizerSpec::lion_k(0.05 / (1 - beta), beta, beta, 0.0, 1e-8, KSpec::HalfSquaredTwoNorm), loss, theta0, 150);
    double gap = 0;
    for (std::size_t n = 0; n < hb.size(); ++n) gap = std::max(gap, linf_distance(hb.iterates[n], lion.iterates[n]));
    EXPECT_LE(gap, 1e-10) << beta;
  }
}

TEST(Signum, ExactSignRunsButIsNotSmooth) {
  auto spec = OptimizerSpec::lion_k(0.01, 0.9, 0.99, 0.0, 1e-8, KSpec::Sign);
  const auto traj = run_memoryful_steps(spec, quadratic(3, 2), ParamVector::Ones(3), 10);
  EXPECT_EQ(traj.size(), 11u);
  MomentumModel model(spec);
  EXPECT_FALSE(model.smooth());
  EXPECT_THROW(model.require_smooth("test"), NonSmooth);
}
