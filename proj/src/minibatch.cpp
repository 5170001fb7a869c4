#include "memlens/minibatch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace memlens {

namespace {

void require_beta(double beta, const char* where) {
  if (!(beta >= 0.0 && beta < 1.0)) {
    throw Error(std::string(where) + ": beta = " + format_double(beta) + " must lie in [0, 1)");
  }
}

void require_family(const MiniBatchFamily& family, const ParamVector& theta, const char* where) {
  if (family.count() < 2) throw Error(std::string(where) + ": need at least 2 batches");
  if (theta.size() != family.dim()) {
    throw Error(std::string(where) + ": theta has dimension " + std::to_string(theta.size()) + ", family has " +
                std::to_string(family.dim()));
  }
}

// Batch gradients at theta, shared by every ordering.
std::vector<ParamVector> batch_grads(const MiniBatchFamily& family, const ParamVector& theta) {
  std::vector<ParamVector> out;
  out.reserve(family.count());
  for (std::size_t k = 0; k < family.count(); ++k) out.push_back(family.batch_grad(k, theta));
  return out;
}

// c / h for one ordering. E_j = g_perm[j] + beta E_{j-1} and R_p = sum_{j >= p} E_j,
// so the correction is beta sum_p beta^(n-1-p) A_perm[p] R_p.
ParamVector ordering_correction(const MiniBatchFamily& family, const std::vector<ParamVector>& grads,
                                const std::vector<int>& perm, double beta) {
  const std::size_t n = perm.size() - 1;
  const Index d = family.dim();
  std::vector<ParamVector> E(n);
  ParamVector running = ParamVector::Zero(d);
  for (std::size_t j = 0; j < n; ++j) {
    running = grads[static_cast<std::size_t>(perm[j])] + beta * running;
    E[j] = running;
  }
  ParamVector out = ParamVector::Zero(d);
  ParamVector suffix = ParamVector::Zero(d);
  double weight = 1.0;  // beta^(n-1-p), walking p downwards
  for (std::size_t p = n; p-- > 0;) {
    suffix += E[p];
    out.noalias() += weight * (family.hessians[static_cast<std::size_t>(perm[p])] * suffix);
    weight *= beta;
  }
  return beta * out;
}

void check_ordering(const std::vector<int>& perm, std::size_t count) {
  if (perm.size() != count) throw Error("permutation_correction: ordering length does not match batch count");
  std::vector<char> seen(count, 0);
  for (int k : perm) {
    if (k < 0 || static_cast<std::size_t>(k) >= count || seen[static_cast<std::size_t>(k)]) {
      throw Error("permutation_correction: ordering is not a permutation of 0 .. " + std::to_string(count - 1));
    }
    seen[static_cast<std::size_t>(k)] = 1;
  }
}

long factorial(std::size_t k) {
  long out = 1;
  for (std::size_t i = 2; i <= k; ++i) out *= static_cast<long>(i);
  return out;
}

// The rank-th ordering in lexicographic order (factorial number system).
std::vector<int> unrank(std::size_t count, long rank) {
  std::vector<int> pool(count);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> out;
  out.reserve(count);
  for (std::size_t i = count; i > 0; --i) {
    const long block = factorial(i - 1);
    const auto pick = static_cast<std::size_t>(rank / block);
    rank %= block;
    out.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

void require_exhaustive(const MiniBatchFamily& family) {
  if (family.count() > kMaxExhaustiveBatches) {
    throw Error("expected_correction_exhaustive: " + std::to_string(family.count()) + " batches exceeds the limit of " +
                std::to_string(kMaxExhaustiveBatches) + "; use the Monte Carlo estimator");
  }
}

// Running mean and sum of squared deviations.
struct Welford {
  long count = 0;
  ParamVector mean;
  ParamVector m2;

  explicit Welford(Index d) : mean(ParamVector::Zero(d)), m2(ParamVector::Zero(d)) {}

  void add(const ParamVector& x) {
    ++count;
    const ParamVector delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta.cwiseProduct(x - mean);
  }

  // Chan et al. pairwise merge.
  void merge(const Welford& other) {
    if (other.count == 0) return;
    if (count == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(count);
    const double nb = static_cast<double>(other.count);
    const double total = na + nb;
    const ParamVector delta = other.mean - mean;
    mean += delta * (nb / total);
    m2 += other.m2 + delta.cwiseProduct(delta) * (na * nb / total);
    count += other.count;
  }
};

McEstimate finish(const Welford& acc, double h) {
  McEstimate est;
  est.samples = acc.count;
  est.mean = h * acc.mean;
  const double n = static_cast<double>(acc.count);
  est.stderr_ = h * (acc.m2 / ((n - 1.0) * n)).cwiseSqrt();
  return est;
}

void require_samples(long samples) {
  if (samples < 100) throw Error("expected_correction_mc: samples = " + std::to_string(samples) + " must be >= 100");
}

constexpr long kPermChunk = 64;
constexpr long kMcChunk = 1024;

}  // namespace

PermutationCoefficients perm_coefficients(double beta, long n) {
  require_beta(beta, "perm_coefficients");
  if (n < 0) throw Error("perm_coefficients: n must be non-negative");
  // inner(b) = sum_{l=1}^{b+1} beta^(b+1-l) = sum_{j=0}^{b} beta^j.
  double c_eq = 0.0;
  double pow_b = 1.0;
  double inner = 0.0;
  for (long b = 0; b < n; ++b) {
    inner += pow_b;
    c_eq += pow_b * inner;
    pow_b *= beta;
  }
  c_eq *= beta;
  // geo[m] = sum_{b=0}^{m} beta^b; total = beta sum_k beta^k sum_{l=1}^{k+1} geo[n-l].
  std::vector<double> geo(static_cast<std::size_t>(std::max<long>(n, 1)), 0.0);
  double acc = 0.0;
  double p = 1.0;
  for (long m = 0; m < n; ++m) {
    acc += p;
    geo[static_cast<std::size_t>(m)] = acc;
    p *= beta;
  }
  double total = 0.0;
  double pow_k = 1.0;
  double partial = 0.0;
  for (long k = 0; k < n; ++k) {
    partial += geo[static_cast<std::size_t>(n - (k + 1))];
    total += pow_k * partial;
    pow_k *= beta;
  }
  total *= beta;
  PermutationCoefficients out;
  out.c_eq = c_eq;
  out.c_neq = total - c_eq;
  out.n = n;
  out.beta = beta;
  return out;
}

PermutationCoefficients perm_coefficients_limit(double beta) {
  require_beta(beta, "perm_coefficients_limit");
  const double q = 1.0 - beta;
  PermutationCoefficients out;
  out.c_eq = beta / (q * q * (1.0 + beta));
  out.c_neq = 2.0 * beta * beta / (q * q * q * (1.0 + beta));
  out.asymptotic = true;
  out.n = -1;
  out.beta = beta;
  return out;
}

ParamVector permutation_correction(const MiniBatchFamily& family, const std::vector<int>& perm, double beta,
                                   const ParamVector& theta, double h) {
  require_beta(beta, "permutation_correction");
  require_family(family, theta, "permutation_correction");
  check_ordering(perm, family.count());
  return h * ordering_correction(family, batch_grads(family, theta), perm, beta);
}

ParamVector expected_correction_exhaustive(const MiniBatchFamily& family, double beta, const ParamVector& theta,
                                           double h) {
  require_beta(beta, "expected_correction_exhaustive");
  require_family(family, theta, "expected_correction_exhaustive");
  require_exhaustive(family);
  const std::size_t count = family.count();
  const std::vector<ParamVector> grads = batch_grads(family, theta);
  const long total = factorial(count);
  const long chunks = (total + kPermChunk - 1) / kPermChunk;
  std::vector<ParamVector> partial(static_cast<std::size_t>(chunks), ParamVector::Zero(family.dim()));

#pragma omp parallel for schedule(static)
  for (long c = 0; c < chunks; ++c) {
    const long begin = c * kPermChunk;
    const long end = std::min(total, begin + kPermChunk);
    std::vector<int> perm = unrank(count, begin);
    ParamVector& sum = partial[static_cast<std::size_t>(c)];
    for (long r = begin; r < end; ++r) {
      sum += ordering_correction(family, grads, perm, beta);
      std::next_permutation(perm.begin(), perm.end());
    }
  }

  ParamVector sum = ParamVector::Zero(family.dim());
  for (const ParamVector& s : partial) sum += s;
  return (h / static_cast<double>(total)) * sum;
}

ParamVector expected_correction_exhaustive_serial(const MiniBatchFamily& family, double beta,
                                                  const ParamVector& theta, double h) {
  require_beta(beta, "expected_correction_exhaustive");
  require_family(family, theta, "expected_correction_exhaustive");
  require_exhaustive(family);
  const std::vector<ParamVector> grads = batch_grads(family, theta);
  std::vector<int> perm(family.count());
  std::iota(perm.begin(), perm.end(), 0);
  ParamVector sum = ParamVector::Zero(family.dim());
  long orderings = 0;
  do {
    sum += ordering_correction(family, grads, perm, beta);
    ++orderings;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return (h / static_cast<double>(orderings)) * sum;
}

std::vector<int> sample_permutation(std::size_t count, std::uint64_t seed, std::uint64_t index) {
  Rng rng(seed, index);
  std::vector<int> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = count; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

McEstimate expected_correction_mc(const MiniBatchFamily& family, double beta, const ParamVector& theta, double h,
                                  long samples, std::uint64_t seed) {
  require_beta(beta, "expected_correction_mc");
  require_family(family, theta, "expected_correction_mc");
  require_samples(samples);
  const std::vector<ParamVector> grads = batch_grads(family, theta);
  const long chunks = (samples + kMcChunk - 1) / kMcChunk;
  std::vector<Welford> partial(static_cast<std::size_t>(chunks), Welford(family.dim()));

#pragma omp parallel for schedule(static)
  for (long c = 0; c < chunks; ++c) {
    const long begin = c * kMcChunk;
    const long end = std::min(samples, begin + kMcChunk);
    Welford& acc = partial[static_cast<std::size_t>(c)];
    for (long i = begin; i < end; ++i) {
      const auto perm = sample_permutation(family.count(), seed, static_cast<std::uint64_t>(i));
      acc.add(ordering_correction(family, grads, perm, beta));
    }
  }

  Welford acc(family.dim());
  for (const Welford& w : partial) acc.merge(w);
  return finish(acc, h);
}

McEstimate expected_correction_mc_serial(const MiniBatchFamily& family, double beta, const ParamVector& theta,
                                         double h, long samples, std::uint64_t seed) {
  require_beta(beta, "expected_correction_mc");
  require_family(family, theta, "expected_correction_mc");
  require_samples(samples);
  const std::vector<ParamVector> grads = batch_grads(family, theta);
  Welford acc(family.dim());
  for (long i = 0; i < samples; ++i) {
    acc.add(ordering_correction(family, grads, sample_permutation(family.count(), seed, static_cast<std::uint64_t>(i)),
                                beta));
  }
  return finish(acc, h);
}

BatchExpectations batch_expectations(const MiniBatchFamily& family, const ParamVector& theta) {
  require_family(family, theta, "batch_expectations");
  const std::size_t count = family.count();
  const std::vector<ParamVector> grads = batch_grads(family, theta);
  BatchExpectations out{ParamVector::Zero(family.dim()), ParamVector::Zero(family.dim())};
  for (std::size_t i = 0; i < count; ++i) {
    out.same += family.hessians[i] * grads[i];
    for (std::size_t j = 0; j < count; ++j) {
      if (j != i) out.cross += family.hessians[i] * grads[j];
    }
  }
  const double c = static_cast<double>(count);
  out.same /= c;
  out.cross /= c * (c - 1.0);
  return out;
}

ParamVector decomposed_correction(const MiniBatchFamily& family, double beta, const ParamVector& theta, double h) {
  const PermutationCoefficients k = perm_coefficients(beta, static_cast<long>(family.count()) - 1);
  const BatchExpectations e = batch_expectations(family, theta);
  return h * (k.c_eq * e.same + k.c_neq * e.cross);
}

double gradient_noise(const MiniBatchFamily& family, const ParamVector& theta) {
  require_family(family, theta, "gradient_noise");
  const ParamVector mean = family.mean_grad(theta);
  double acc = 0.0;
  for (std::size_t k = 0; k < family.count(); ++k) acc += (family.batch_grad(k, theta) - mean).squaredNorm();
  return acc / static_cast<double>(family.count());
}

double modified_loss_minibatch(const MiniBatchFamily& family, double beta, const ParamVector& theta, double h) {
  require_beta(beta, "modified_loss_minibatch");
  const double q = 1.0 - beta;
  const ParamVector g = family.mean_grad(theta);
  return family.mean_loss(theta) + h * beta / (2.0 * q * q) * g.squaredNorm() +
         h * beta / (2.0 * q * (1.0 + beta)) * gradient_noise(family, theta);
}

ParamVector expected_drift_asymptotic(const MiniBatchFamily& family, double beta, const ParamVector& theta,
                                      double h) {
  require_beta(beta, "expected_drift_asymptotic");
  const double q = 1.0 - beta;
  const ParamVector g = family.mean_grad(theta);
  const ParamVector Ag = family.mean_hessian() * g;
  // E[(A_i - A)(g_i - g)] = E[A_i g_i] - A g.
  const ParamVector cov = batch_expectations(family, theta).same - Ag;
  return g / q + h * (beta / (q * q * q) * Ag + perm_coefficients_limit(beta).c_eq * cov);
}

}  // namespace memlens
