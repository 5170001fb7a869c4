#include "memlens/optimizer.hpp"

#include <cmath>
#include <sstream>

namespace memlens {

namespace {

bool is_lion(OptimizerKind kind) { return kind == OptimizerKind::LionK || kind == OptimizerKind::Signum; }

// (1 - beta) / (1 - beta^(n+1)), or its limit 1 - beta.
double adam_bias(double beta, long n, bool corrected) {
  return corrected ? (1.0 - beta) / (1.0 - ipow(beta, n + 1)) : 1.0 - beta;
}

}  // namespace

MomentumModel::MomentumModel(const OptimizerSpec& spec) : spec_(spec) {
  spec_.validate();
  switch (spec_.kind) {
    case OptimizerKind::HeavyBall:
      channels_ = {{Feature::Grad, spec_.beta1}};
      break;
    case OptimizerKind::Nesterov:
      channels_ = {{Feature::Grad, spec_.beta1}, {Feature::Grad, 0.0}};
      break;
    case OptimizerKind::AdamW:
      channels_ = {{Feature::Grad, spec_.beta1}, {Feature::GradSquared, spec_.beta2}, {Feature::Theta, 0.0}};
      break;
    case OptimizerKind::NAdamW:
      channels_ = {{Feature::Grad, spec_.beta1},
                   {Feature::GradSquared, spec_.beta2},
                   {Feature::Theta, 0.0},
                   {Feature::Grad, 0.0}};
      break;
    case OptimizerKind::LionK:
    case OptimizerKind::Signum:
      channels_ = {{Feature::NegGrad, spec_.beta2}, {Feature::Theta, 0.0}};
      break;
  }
}

ChannelWeights MomentumModel::weight(std::size_t l, long n) const {
  const double b1 = spec_.beta1;
  const double b2 = spec_.beta2;
  const bool bc = spec_.bias_correction;
  switch (spec_.kind) {
    case OptimizerKind::HeavyBall:
      return {1.0, b1};
    case OptimizerKind::Nesterov:
      return l == 0 ? ChannelWeights{b1, b1 * b1} : ChannelWeights{1.0, 0.0};
    case OptimizerKind::AdamW:
    case OptimizerKind::NAdamW: {
      if (l == 0) {
        const double b = adam_bias(b1, n, bc);
        return {b, b * b1};
      }
      if (l == 1) {
        const double b = adam_bias(b2, n, bc);
        return {b, b * b2};
      }
      if (l == 2) return {spec_.lambda, 0.0};
      return {1.0, 0.0};
    }
    case OptimizerKind::LionK:
    case OptimizerKind::Signum: {
      if (l == 1) return {spec_.lambda, 0.0};
      // rho1 = beta1, rho2 = beta2. The current weight merges the two gradient
      // terms of the optimizer, so no division by rho2 is needed.
      if (!bc) return {1.0 - b1, (1.0 - b2) * b1};
      const double denom = 1.0 - ipow(b2, n + 1);
      return {1.0 - b1 * (1.0 - ipow(b2, n)) / denom, (1.0 - b2) * b1 / denom};
    }
  }
  throw Error("unknown optimizer kind");
}

ChannelWeights MomentumModel::limit_weight(std::size_t l) const {
  OptimizerSpec limit = spec_;
  limit.bias_correction = false;
  return MomentumModel(limit).weight(l, 0);
}

double MomentumModel::total_weight(std::size_t l, long n) const {
  const ChannelWeights w = weight(l, n);
  const double beta = channels_[l].decay;
  return w.current + w.lag * (1.0 - ipow(beta, n)) / (1.0 - beta);
}

double MomentumModel::limit_total_weight(std::size_t l) const {
  const ChannelWeights w = limit_weight(l);
  return w.current + w.lag / (1.0 - channels_[l].decay);
}

std::vector<ParamVector> MomentumModel::features(const LossModel& loss, const ParamVector& theta) const {
  const ParamVector g = loss.grad(theta);
  std::vector<ParamVector> out;
  out.reserve(channels_.size());
  for (const Channel& c : channels_) {
    switch (c.feature) {
      case Feature::Grad: out.push_back(g); break;
      case Feature::GradSquared: out.push_back(g.cwiseProduct(g)); break;
      case Feature::Theta: out.push_back(theta); break;
      case Feature::NegGrad: out.push_back(-g); break;
    }
  }
  return out;
}

ParamVector MomentumModel::feature_jvp(std::size_t l, const LossModel& loss, const ParamVector& theta,
                                       const ParamVector& grad, const ParamVector& v) const {
  switch (channels_[l].feature) {
    case Feature::Grad: return loss.hvp(theta, v);
    case Feature::GradSquared: return 2.0 * grad.cwiseProduct(loss.hvp(theta, v));
    case Feature::Theta: return v;
    case Feature::NegGrad: return -loss.hvp(theta, v);
  }
  throw Error("unknown feature");
}

ParamVector grad_K(KSpec kspec, double eps, const ParamVector& x) {
  switch (kspec) {
    case KSpec::SmoothedOneNorm: return softsign(x, eps);
    case KSpec::HalfSquaredTwoNorm: return x;
    case KSpec::Sign: return x.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
  }
  throw Error("unknown kspec");
}

ParamVector hess_K(KSpec kspec, double eps, const ParamVector& x, const ParamVector& u) {
  switch (kspec) {
    case KSpec::SmoothedOneNorm: {
      const Eigen::ArrayXd s = x.array().square() + eps;
      return (eps / (s * s.sqrt()) * u.array()).matrix();
    }
    case KSpec::HalfSquaredTwoNorm: return u;
    case KSpec::Sign: break;
  }
  throw NonSmooth("the Hessian of K does not exist for kspec 'sign'");
}

ParamVector MomentumModel::combine(const std::vector<ParamVector>& m) const {
  switch (spec_.kind) {
    case OptimizerKind::HeavyBall: return m[0];
    case OptimizerKind::Nesterov: return m[0] + m[1];
    case OptimizerKind::AdamW:
      return (m[0].array() / (m[1].array() + spec_.eps).sqrt()).matrix() + m[2];
    case OptimizerKind::NAdamW: {
      const ParamVector num = spec_.beta1 * m[0] + (1.0 - spec_.beta1) * m[3];
      return (num.array() / (m[1].array() + spec_.eps).sqrt()).matrix() + m[2];
    }
    case OptimizerKind::LionK:
    case OptimizerKind::Signum:
      return -grad_K(spec_.kspec, spec_.eps, m[0]) + m[1];
  }
  throw Error("unknown optimizer kind");
}

ParamVector MomentumModel::combine_partial(std::size_t l, const std::vector<ParamVector>& m,
                                           const ParamVector& u) const {
  const double eps = spec_.eps;
  switch (spec_.kind) {
    case OptimizerKind::HeavyBall:
    case OptimizerKind::Nesterov:
      return u;
    case OptimizerKind::AdamW:
    case OptimizerKind::NAdamW: {
      const Eigen::ArrayXd s = m[1].array() + eps;
      const Eigen::ArrayXd root = s.sqrt();
      const bool nadam = spec_.kind == OptimizerKind::NAdamW;
      const double b1 = spec_.beta1;
      switch (l) {
        case 0: return ((nadam ? b1 : 1.0) * u.array() / root).matrix();
        case 1: {
          const Eigen::ArrayXd num = nadam ? Eigen::ArrayXd((b1 * m[0] + (1.0 - b1) * m[3]).array()) : Eigen::ArrayXd(m[0].array());
          return (-0.5 * num * u.array() / (s * root)).matrix();
        }
        case 2: return u;
        default: return ((1.0 - b1) * u.array() / root).matrix();
      }
    }
    case OptimizerKind::LionK:
    case OptimizerKind::Signum:
      return l == 0 ? ParamVector(-hess_K(spec_.kspec, spec_.eps, m[0], u)) : u;
  }
  throw Error("unknown optimizer kind");
}

bool MomentumModel::smooth() const { return !(is_lion(spec_.kind) && spec_.kspec == KSpec::Sign); }

void MomentumModel::require_smooth(const std::string& what) const {
  if (!smooth()) throw NonSmooth(what + " needs a smooth update; kspec 'sign' is only usable in plain runs");
}

void HistoryBuffer::push(ParamVector theta) {
  if (!items_.empty() && theta.size() != items_.back().size()) {
    throw Error("history: iterate length " + std::to_string(theta.size()) + " differs from " +
                std::to_string(items_.back().size()));
  }
  items_.push_back(std::move(theta));
  ++count_;
  if (horizon_ && static_cast<long>(items_.size()) > *horizon_ + 1) items_.pop_front();
}

long HistoryBuffer::latest() const {
  if (count_ == 0) throw Error("history is empty");
  return count_ - 1;
}

const ParamVector& HistoryBuffer::at(long k) const {
  if (k < oldest_retained() || k >= count_) {
    throw Error("history: iterate " + std::to_string(k) + " is not retained");
  }
  return items_[static_cast<std::size_t>(k - oldest_retained())];
}

ParamVector eval_F_history(const OptimizerSpec& spec, const LossModel& loss, const HistoryBuffer& hist) {
  if (hist.empty()) throw Error("eval_F_history: empty history");
  spec.validate();
  const long n = hist.latest();
  const long first = hist.oldest_retained();
  const ParamVector& theta_n = hist.at(n);
  const Index d = theta_n.size();

  std::vector<ParamVector> grads;
  for (long k = first; k <= n; ++k) grads.push_back(loss.grad(hist.at(k)));
  auto g = [&](long k) -> const ParamVector& { return grads[static_cast<std::size_t>(k - first)]; };

  // sum_k beta^(n-k) phi(g_k) over the retained window.
  auto ema = [&](double beta, auto phi) {
    ParamVector acc = ParamVector::Zero(d);
    for (long k = first; k <= n; ++k) acc += ipow(beta, n - k) * phi(g(k));
    return acc;
  };
  auto id = [](const ParamVector& v) -> ParamVector { return v; };
  auto sq = [](const ParamVector& v) -> ParamVector { return v.cwiseProduct(v); };
  const double b1 = spec.beta1;
  const double b2 = spec.beta2;

  switch (spec.kind) {
    case OptimizerKind::HeavyBall:
      return ema(b1, id);
    case OptimizerKind::Nesterov:
      return b1 * ema(b1, id) + g(n);
    case OptimizerKind::AdamW:
    case OptimizerKind::NAdamW: {
      const double c1 = spec.bias_correction ? (1.0 - b1) / (1.0 - std::pow(b1, n + 1)) : 1.0 - b1;
      const double c2 = spec.bias_correction ? (1.0 - b2) / (1.0 - std::pow(b2, n + 1)) : 1.0 - b2;
      const ParamVector m1 = c1 * ema(b1, id);
      const ParamVector m2 = c2 * ema(b2, sq);
      const ParamVector num = spec.kind == OptimizerKind::AdamW ? m1 : ParamVector(b1 * m1 + (1.0 - b1) * g(n));
      return (num.array() / (m2.array() + spec.eps).sqrt()).matrix() + spec.lambda * theta_n;
    }
    case OptimizerKind::LionK:
    case OptimizerKind::Signum: {
      const double rho1 = b1;
      const double rho2 = b2;
      const double bias = spec.bias_correction ? 1.0 / (1.0 - std::pow(rho2, n + 1)) : 1.0;
      ParamVector arg;
      if (rho2 > 0.0) {
        const ParamVector m1 = -(1.0 - rho2) * (rho1 / rho2) * bias * ema(rho2, id);
        const ParamVector m2 = -(1.0 - rho1 / rho2) * g(n);
        arg = m1 + m2;
      } else {
        // rho2 -> 0 limit of the same two terms.
        arg = -(1.0 - rho1) * g(n);
        if (n - 1 >= first) arg -= rho1 * g(n - 1);
      }
      return -grad_K(spec.kspec, spec.eps, arg) + spec.lambda * theta_n;
    }
  }
  throw Error("eval_F_history: unknown optimizer kind");
}

ParamVector eval_F_constant(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta, long n) {
  const MomentumModel model(spec);
  std::vector<ParamVector> m = model.features(loss, theta);
  for (std::size_t l = 0; l < m.size(); ++l) m[l] *= model.total_weight(l, n);
  return model.combine(m);
}

ParamVector eval_F_limit(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta) {
  const MomentumModel model(spec);
  std::vector<ParamVector> m = model.features(loss, theta);
  for (std::size_t l = 0; l < m.size(); ++l) m[l] *= model.limit_total_weight(l);
  return model.combine(m);
}

ParamVector jvp_F_limit(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                        const ParamVector& v) {
  const MomentumModel model(spec);
  model.require_smooth("jvp_F_limit");
  const ParamVector g = loss.grad(theta);
  std::vector<ParamVector> m = model.features(loss, theta);
  for (std::size_t l = 0; l < m.size(); ++l) m[l] *= model.limit_total_weight(l);
  ParamVector out = ParamVector::Zero(theta.size());
  for (std::size_t l = 0; l < m.size(); ++l) {
    const double w = model.limit_total_weight(l);
    if (w == 0.0) continue;
    out += model.combine_partial(l, m, w * model.feature_jvp(l, loss, theta, g, v));
  }
  return out;
}

MomentumState initial_state(const MomentumModel& model, Index dim) {
  MomentumState state;
  state.lag_sums.assign(model.size(), ParamVector::Zero(dim));
  return state;
}

ParamVector advance(const MomentumModel& model, const LossModel& loss, MomentumState& state,
                    const ParamVector& theta) {
  if (state.lag_sums.size() != model.size()) throw Error("momentum state does not match the optimizer");
  const std::vector<ParamVector> f = model.features(loss, theta);
  state.momenta.resize(model.size());
  for (std::size_t l = 0; l < model.size(); ++l) {
    const ChannelWeights w = model.weight(l, state.n);
    state.momenta[l] = w.current * f[l] + w.lag * state.lag_sums[l];
  }
  ParamVector F = model.combine(state.momenta);
  for (std::size_t l = 0; l < model.size(); ++l) {
    state.lag_sums[l] = f[l] + model.channels()[l].decay * state.lag_sums[l];
  }
  ++state.n;
  return F;
}

StepResult step_state(const OptimizerSpec& spec, const LossModel& loss, const MomentumState& state,
                      const ParamVector& theta) {
  const MomentumModel model(spec);
  StepResult out{ParamVector(), state};
  const ParamVector F = advance(model, loss, out.state, theta);
  out.theta = theta - spec.h * F;
  loss.require_in_domain(out.theta, "step " + std::to_string(out.state.n));
  return out;
}

void Trajectory::record(const LossModel& model, const ParamVector& theta) {
  iterates.push_back(theta);
  loss.push_back(model.value(theta));
  grad_inf.push_back(linf_norm(model.grad(theta)));
}

std::string Trajectory::to_csv() const {
  std::ostringstream out;
  out << "step,t";
  const Index d = iterates.empty() ? 0 : iterates.front().size();
  for (Index i = 0; i < d; ++i) out << ",theta_" << i;
  out << ",loss\n";
  for (std::size_t n = 0; n < iterates.size(); ++n) {
    out << n << ',' << format_double(static_cast<double>(n) * h);
    for (Index i = 0; i < d; ++i) out << ',' << format_double(iterates[n][i]);
    out << ',' << format_double(loss[n]) << '\n';
  }
  return out.str();
}

Trajectory run_memoryful_steps(const OptimizerSpec& spec, const LossPtr& loss, const ParamVector& theta0,
                               long steps) {
  const MomentumModel model(spec);
  Trajectory traj;
  traj.h = spec.h;
  traj.T = static_cast<double>(steps) * spec.h;
  loss->require_in_domain(theta0, "step 0");
  traj.record(*loss, theta0);
  MomentumState state = initial_state(model, theta0.size());
  ParamVector theta = theta0;
  for (long n = 0; n < steps; ++n) {
    theta -= spec.h * advance(model, *loss, state, theta);
    try {
      loss->require_in_domain(theta, "step " + std::to_string(n + 1));
    } catch (const DomainExit& e) {
      traj.domain_error = e.what();
      break;
    }
    traj.record(*loss, theta);
  }
  return traj;
}

Trajectory run_memoryful(const OptimizerSpec& spec, const LossPtr& loss, const ParamVector& theta0, double T) {
  Trajectory traj = run_memoryful_steps(spec, loss, theta0, iteration_count(T, spec.h));
  traj.T = T;
  return traj;
}

Trajectory run_memoryful(const RunConfig& config) {
  const LossPtr loss = build_loss(config.loss, config.dim, config.seed);
  return run_memoryful(config.optimizer, loss, initial_theta(config), config.T);
}

}  // namespace memlens
