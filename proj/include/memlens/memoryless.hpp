#pragma once

#include "memlens/correction.hpp"
#include "memlens/optimizer.hpp"

#include <vector>

namespace memlens {

enum class MemorylessOrder { FirstOrder, SecondOrder };

// FirstOrder ignores `variant`.
struct MemorylessKind {
  MemorylessOrder order = MemorylessOrder::SecondOrder;
  CorrectionVariant variant = CorrectionVariant::FiniteN;
};

std::string to_string(const MemorylessKind& kind);

// theta - h [F^(n)(theta, ..., theta) + c^(n)(theta)], without c for first order.
ParamVector step_memoryless(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta, long n,
                            MemorylessKind kind);

// Starts from theta0 exactly and takes floor(T / h) steps.
Trajectory run_memoryless(const OptimizerSpec& spec, const LossPtr& loss, const ParamVector& theta0, double T,
                          MemorylessKind kind);
Trajectory run_memoryless(const RunConfig& config, MemorylessKind kind);

/// ||theta~(n+1) - theta~(n) + h F^(n)(theta~(n), ..., theta~(0))||_inf for
/// n = 0 .. min(n_max, size - 2), feeding the memoryless iterates back into
/// the memoryful update as its history.
std::vector<double> one_step_defect(const OptimizerSpec& spec, const LossModel& loss, const Trajectory& memoryless,
                                    long n_max);
std::vector<double> one_step_defect(const RunConfig& config, long n_max, MemorylessKind kind = {});

// Hand-specialised second-order updates for bias-corrected AdamW and for
// bias-corrected Lion with the smoothed one-norm.
ParamVector adamw_memoryless_update(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                    long n);
ParamVector lion_memoryless_update(const OptimizerSpec& spec, const LossModel& loss, const ParamVector& theta,
                                   long n);

}  // namespace memlens
