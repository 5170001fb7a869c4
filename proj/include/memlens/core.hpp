#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace memlens {

using ParamVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An iterate left the open domain on which the loss derivatives are bounded.
class DomainExit : public Error {
 public:
  using Error::Error;
};

// Requested a derivative of a non-smooth update (exact-sign Lion).
class NonSmooth : public Error {
 public:
  using Error::Error;
};

enum class OptimizerKind { HeavyBall, Nesterov, AdamW, NAdamW, LionK, Signum };

// Choice of the convex function K for Lion-K.
enum class KSpec { SmoothedOneNorm, HalfSquaredTwoNorm, Sign };

std::string to_string(OptimizerKind kind);
std::string to_string(KSpec kspec);
OptimizerKind parse_kind(std::string_view text);
KSpec parse_kspec(std::string_view text);

/// Algorithm choice plus every hyperparameter. For Lion-K, `beta1` and
/// `beta2` hold rho1 and rho2. Fields irrelevant to `kind` are never read.
struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::HeavyBall;
  double h = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda = 0.0;
  double eps = 1e-8;
  KSpec kspec = KSpec::SmoothedOneNorm;
  // n-dependent normalisers b^(n) when true, their n -> infinity limits when
  // false. Heavy-ball and Nesterov have no normaliser and ignore the flag.
  bool bias_correction = true;

  static OptimizerSpec heavy_ball(double h, double beta);
  static OptimizerSpec nesterov(double h, double beta);
  static OptimizerSpec adamw(double h, double beta1, double beta2, double lambda, double eps,
                             bool bias_correction = true);
  static OptimizerSpec nadamw(double h, double beta1, double beta2, double lambda, double eps,
                              bool bias_correction = true);
  static OptimizerSpec lion_k(double h, double rho1, double rho2, double lambda, double eps,
                              KSpec kspec = KSpec::SmoothedOneNorm, bool bias_correction = false);
  // Signum is Lion-K with rho1 == rho2 and the smoothed one-norm.
  static OptimizerSpec signum(double h, double beta, double lambda, double eps,
                              bool bias_correction = false);

  OptimizerSpec with_h(double new_h) const;
  // Largest exponential decay rate among the momentum variables.
  double max_decay() const;
  void validate() const;
};

/// Seeded generator; every draw is reproducible from (seed, stream).
/// SplitMix64 over a state derived from both.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);
  Rng(std::uint64_t seed, std::string_view stream);

  std::uint64_t next();
  double uniform();                     // [0, 1)
  double uniform(double lo, double hi);
  double normal();                      // Box-Muller
  std::uint64_t below(std::uint64_t n);  // uniform on [0, n)

 private:
  std::uint64_t state_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

std::uint64_t fnv1a(std::string_view text);

/// Loss fixture id plus numeric parameters, as read from a config.
struct LossSpec {
  std::string id = "quadratic";
  std::map<std::string, double> params;

  double get(const std::string& key, double fallback) const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Index dim = 1;
  double T = 1.0;
  LossSpec loss;
  OptimizerSpec optimizer;
  // Empty means: draw uniformly from [-theta0_scale, theta0_scale]^d.
  ParamVector initial_theta;
  double theta0_scale = 1.0;
};

ParamVector initial_theta(const RunConfig& config);

// floor(T / h), tolerant of T / h landing a rounding error below an integer.
long iteration_count(double T, double h);

double smoothed_one_norm(const ParamVector& v, double eps);
ParamVector softsign(const ParamVector& v, double eps);
double linf_distance(const ParamVector& a, const ParamVector& b);
double linf_norm(const ParamVector& v);
bool all_finite(const ParamVector& v);

// Shortest text that reads back to the same double, independent of locale.
std::string format_double(double x);

// 1 for n == 0 as well as for base == 0; std::pow agrees but this is explicit.
double ipow(double base, long n);

}  // namespace memlens
