#include "memlens/core.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace memlens {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::HeavyBall: return "heavyball";
    case OptimizerKind::Nesterov: return "nesterov";
    case OptimizerKind::AdamW: return "adamw";
    case OptimizerKind::NAdamW: return "nadamw";
    case OptimizerKind::LionK: return "lionk";
    case OptimizerKind::Signum: return "signum";
  }
  return "unknown";
}

std::string to_string(KSpec kspec) {
  switch (kspec) {
    case KSpec::SmoothedOneNorm: return "smoothed-one-norm";
    case KSpec::HalfSquaredTwoNorm: return "half-squared-two-norm";
    case KSpec::Sign: return "sign";
  }
  return "unknown";
}

OptimizerKind parse_kind(std::string_view text) {
  if (text == "heavyball" || text == "heavy-ball") return OptimizerKind::HeavyBall;
  if (text == "nesterov") return OptimizerKind::Nesterov;
  if (text == "adamw" || text == "adam") return OptimizerKind::AdamW;
  if (text == "nadamw" || text == "nadam") return OptimizerKind::NAdamW;
  if (text == "lionk" || text == "lion") return OptimizerKind::LionK;
  if (text == "signum") return OptimizerKind::Signum;
  throw Error("unknown optimizer kind '" + std::string(text) + "'");
}

KSpec parse_kspec(std::string_view text) {
  if (text == "smoothed-one-norm") return KSpec::SmoothedOneNorm;
  if (text == "half-squared-two-norm") return KSpec::HalfSquaredTwoNorm;
  if (text == "sign") return KSpec::Sign;
  throw Error("unknown kspec '" + std::string(text) + "'");
}

OptimizerSpec OptimizerSpec::heavy_ball(double h, double beta) {
  OptimizerSpec s;
  s.kind = OptimizerKind::HeavyBall;
  s.h = h;
  s.beta1 = beta;
  return s;
}

OptimizerSpec OptimizerSpec::nesterov(double h, double beta) {
  OptimizerSpec s = heavy_ball(h, beta);
  s.kind = OptimizerKind::Nesterov;
  return s;
}

OptimizerSpec OptimizerSpec::adamw(double h, double beta1, double beta2, double lambda, double eps,
                                   bool bias_correction) {
  OptimizerSpec s;
  s.kind = OptimizerKind::AdamW;
  s.h = h;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.lambda = lambda;
  s.eps = eps;
  s.bias_correction = bias_correction;
  return s;
}

OptimizerSpec OptimizerSpec::nadamw(double h, double beta1, double beta2, double lambda, double eps,
                                    bool bias_correction) {
  OptimizerSpec s = adamw(h, beta1, beta2, lambda, eps, bias_correction);
  s.kind = OptimizerKind::NAdamW;
  return s;
}

OptimizerSpec OptimizerSpec::lion_k(double h, double rho1, double rho2, double lambda, double eps,
                                    KSpec kspec, bool bias_correction) {
  OptimizerSpec s;
  s.kind = OptimizerKind::LionK;
  s.h = h;
  s.beta1 = rho1;
  s.beta2 = rho2;
  s.lambda = lambda;
  s.eps = eps;
  s.kspec = kspec;
  s.bias_correction = bias_correction;
  return s;
}

OptimizerSpec OptimizerSpec::signum(double h, double beta, double lambda, double eps,
                                    bool bias_correction) {
  return lion_k(h, beta, beta, lambda, eps, KSpec::SmoothedOneNorm, bias_correction);
}

OptimizerSpec OptimizerSpec::with_h(double new_h) const {
  OptimizerSpec s = *this;
  s.h = new_h;
  return s;
}

double OptimizerSpec::max_decay() const {
  switch (kind) {
    case OptimizerKind::HeavyBall:
    case OptimizerKind::Nesterov:
      return beta1;
    case OptimizerKind::AdamW:
    case OptimizerKind::NAdamW:
      return std::max(beta1, beta2);
    case OptimizerKind::LionK:
    case OptimizerKind::Signum:
      return beta2;
  }
  return 0.0;
}

void OptimizerSpec::validate() const {
  if (!(h >= 0.0) || !std::isfinite(h)) throw Error("optimizer.h must be finite and >= 0");
  auto unit = [](double b, const char* name) {
    if (!(b >= 0.0 && b < 1.0)) throw Error(std::string("optimizer.") + name + " must lie in [0, 1)");
  };
  unit(beta1, "beta1");
  if (kind != OptimizerKind::HeavyBall && kind != OptimizerKind::Nesterov) {
    unit(beta2, "beta2");
    if (!(lambda >= 0.0)) throw Error("optimizer.lambda must be >= 0");
    if (!(eps > 0.0)) throw Error("optimizer.eps must be > 0");
  }
  if (kind == OptimizerKind::Signum && beta2 != beta1) {
    throw Error("optimizer.beta2 must equal optimizer.beta1 for signum");
  }
}

namespace {

std::uint64_t splitmix(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t mix = seed;
  std::uint64_t a = splitmix(mix);
  mix = stream ^ 0xD1B54A32D192ED03ULL;
  std::uint64_t b = splitmix(mix);
  state_ = a ^ (b * 0x9E3779B97F4A7C15ULL);
}

Rng::Rng(std::uint64_t seed, std::string_view stream) : Rng(seed, fnv1a(stream)) {}

std::uint64_t Rng::next() { return splitmix(state_); }

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  double u1 = 0.0;
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(phi);
  has_cached_ = true;
  return r * std::cos(phi);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Lemire's multiply-shift with rejection.
  std::uint64_t x = next();
  __uint128_t m = static_cast<__uint128_t>(x) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      x = next();
      m = static_cast<__uint128_t>(x) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double LossSpec::get(const std::string& key, double fallback) const {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

ParamVector initial_theta(const RunConfig& config) {
  if (config.initial_theta.size() > 0) {
    if (config.initial_theta.size() != config.dim) {
      throw Error("run.theta0 has " + std::to_string(config.initial_theta.size()) +
                  " entries but loss.dim is " + std::to_string(config.dim));
    }
    return config.initial_theta;
  }
  Rng rng(config.seed, "theta0");
  ParamVector theta(config.dim);
  for (Index i = 0; i < config.dim; ++i) theta[i] = rng.uniform(-config.theta0_scale, config.theta0_scale);
  return theta;
}

long iteration_count(double T, double h) {
  if (!(h > 0.0)) throw Error("step size h must be > 0 to count iterations");
  if (T < 0.0) return 0;
  return static_cast<long>(std::floor(T / h + 1e-9));
}

double smoothed_one_norm(const ParamVector& v, double eps) {
  if (!all_finite(v)) throw Error("non-finite input");
  double total = 0.0;
  for (Index i = 0; i < v.size(); ++i) total += std::sqrt(v[i] * v[i] + eps);
  return total;
}

ParamVector softsign(const ParamVector& v, double eps) {
  if (!all_finite(v)) throw Error("non-finite input");
  return v.array() / (v.array().square() + eps).sqrt();
}

double linf_distance(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) {
    throw Error("length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

double linf_norm(const ParamVector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

bool all_finite(const ParamVector& v) { return v.allFinite(); }

std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

double ipow(double base, long n) {
  double result = 1.0;
  double b = base;
  long e = n;
  while (e > 0) {
    if (e & 1) result *= b;
    b *= b;
    e >>= 1;
  }
  return result;
}

}  // namespace memlens
