#pragma once

#include "memlens/core.hpp"
#include "memlens/loss.hpp"

#include <deque>
#include <optional>
#include <string>
#include <vector>

namespace memlens {

// What a momentum channel averages.
enum class Feature { Grad, GradSquared, Theta, NegGrad };

/// One exponentially weighted channel m = current * f(theta^n) + lag * S,
/// where S = sum_{k>=1} decay^(k-1) f(theta^(n-k)). Splitting off the current
/// term keeps every optimizer finite when a decay rate is zero.
struct Channel {
  Feature feature;
  double decay;
};

struct ChannelWeights {
  double current;
  double lag;
};

// Gradient of K for Lion-K; Hessian of K applied to u (throws NonSmooth for sign).
ParamVector grad_K(KSpec kspec, double eps, const ParamVector& x);
ParamVector hess_K(KSpec kspec, double eps, const ParamVector& x, const ParamVector& u);

/// F^(n) written as Phi(m_1, ..., m_Q) over momentum channels.
class MomentumModel {
 public:
  explicit MomentumModel(const OptimizerSpec& spec);

  const OptimizerSpec& spec() const { return spec_; }
  const std::vector<Channel>& channels() const { return channels_; }
  std::size_t size() const { return channels_.size(); }

  ChannelWeights weight(std::size_t l, long n) const;
  ChannelWeights limit_weight(std::size_t l) const;
  // Coefficient of f(theta) in m_l^(n+1) when every past iterate equals theta.
  double total_weight(std::size_t l, long n) const;
  double limit_total_weight(std::size_t l) const;

  // All channel features at theta, sharing one gradient evaluation.
  std::vector<ParamVector> features(const LossModel& loss, const ParamVector& theta) const;
  // Jacobian of feature l at theta applied to v.
  ParamVector feature_jvp(std::size_t l, const LossModel& loss, const ParamVector& theta,
                          const ParamVector& grad, const ParamVector& v) const;

  ParamVector combine(const std::vector<ParamVector>& m) const;
  // (dPhi / dm_l)(m) applied to u.
  ParamVector combine_partial(std::size_t l, const std::vector<ParamVector>& m, const ParamVector& u) const;

  bool smooth() const;
  // Throws NonSmooth naming `what` for the exact-sign variant.
  void require_smooth(const std::string& what) const;

 private:
  OptimizerSpec spec_;
  std::vector<Channel> channels_;
};

/// Accepted iterates theta^(0..n), append-only. With a truncation horizon only
/// the most recent horizon + 1 iterates are retained; dropping older terms
/// perturbs F^(n) by at most O(max_beta^horizon).
class HistoryBuffer {
 public:
  HistoryBuffer() = default;
  explicit HistoryBuffer(std::optional<long> horizon) : horizon_(horizon) {}

  void push(ParamVector theta);
  bool empty() const { return count_ == 0; }
  // Index n of the newest iterate.
  long latest() const;
  long oldest_retained() const { return count_ - static_cast<long>(items_.size()); }
  const ParamVector& at(long k) const;
  std::optional<long> horizon() const { return horizon_; }

 private:
  std::deque<ParamVector> items_;
  long count_ = 0;
  std::optional<long> horizon_;
};

/// F^(n) evaluated term by term from the optimizer definitions, summing over
/// the stored history. Deliberately independent of MomentumModel.
ParamVector eval_F_history(const OptimizerSpec& spec, const LossModel& loss, const HistoryBuffer& hist);

// F^(n)(theta, ..., theta).
ParamVector eval_F_constant(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta, long n);
// n -> infinity limit of F^(n)(theta, ..., theta).
ParamVector eval_F_limit(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta);
// Jacobian of eval_F_limit at theta applied to v.
ParamVector jvp_F_limit(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                        const ParamVector& v);

/// O(Q d) recursive state: lag sums S_l and the step counter.
struct MomentumState {
  long n = 0;
  std::vector<ParamVector> lag_sums;
  // m_l^(n) as used by the most recent step; empty before the first step.
  std::vector<ParamVector> momenta;
};

MomentumState initial_state(const MomentumModel& model, Index dim);

// Evaluates F^(n) at theta = theta^(n) from the state, then folds theta into the state.
ParamVector advance(const MomentumModel& model, const LossModel& loss, MomentumState& state,
                    const ParamVector& theta);

struct StepResult {
  ParamVector theta;
  MomentumState state;
};

StepResult step_state(const OptimizerSpec& spec, const LossModel& loss, const MomentumState& state,
                      const ParamVector& theta);

struct Trajectory {
  double h = 0.0;
  double T = 0.0;
  std::vector<ParamVector> iterates;
  std::vector<double> loss;
  std::vector<double> grad_inf;
  // Set when the run stopped early because an iterate left the domain.
  std::optional<std::string> domain_error;

  std::size_t size() const { return iterates.size(); }
  bool complete() const { return !domain_error.has_value(); }
  void record(const LossModel& model, const ParamVector& theta);
  // Columns step, t, theta_0..theta_{d-1}, loss.
  std::string to_csv() const;
};

// floor(T / h) steps from theta0.
Trajectory run_memoryful(const OptimizerSpec& spec, const LossPtr& loss, const ParamVector& theta0, double T);
Trajectory run_memoryful_steps(const OptimizerSpec& spec, const LossPtr& loss, const ParamVector& theta0,
                               long steps);
Trajectory run_memoryful(const RunConfig& config);

}  // namespace memlens
