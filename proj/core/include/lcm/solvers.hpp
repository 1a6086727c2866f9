#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "lcm/condition.hpp"
#include "lcm/schedule.hpp"
#include "lcm/tensor.hpp"

namespace lcm {

class DenoiserNet;
class LoraAdapter;

enum class SolverKind { kDdim, kDpm2 };
std::string_view to_string(SolverKind kind);
SolverKind parse_solver_kind(std::string_view text);  // "ddim" | "dpm2"

// ε-prediction queried at per-row time points and conditions.
using EpsFn = std::function<Tensor(const Tensor& z, std::span<const TimePoint> times,
                                   std::span<const Condition> cond)>;

// Frozen teacher as an ε-function. The guidance input receives the constant
// `omega_sentinel`; guidance is applied outside the network by cfg_target.
EpsFn teacher_eps(const DenoiserNet& net, const LoraAdapter* adapter = nullptr,
                  double omega_sentinel = 0.0);

/// Data distributed as N(m, s²I). Under the VP forward process the marginal at
/// (α, σ) is N(αm, γ²I) with γ² = α²s² + σ², so the exact ε-prediction and
/// PF-ODE transport are closed-form.
struct GaussianOracle {
  std::vector<double> mean;
  double scale = 1.0;

  double gamma_sq(const TimePoint& tp) const;
  Tensor eps(const Tensor& z, std::span<const TimePoint> times) const;
  Tensor posterior_mean(const Tensor& z, std::span<const TimePoint> times) const;
  EpsFn as_eps_fn() const;
};

// Ψ = α_lo·x̂₀ + σ_lo·ε̂ − z with x̂₀ = (z − σ_hi·ε̂)/α_hi. Rows with equal
// endpoints return exactly 0.
Tensor ddim_increment(const Tensor& z, std::span<const TimePoint> hi, std::span<const TimePoint> lo,
                      const Tensor& eps_hat);

// Second-order DPM-Solver step with one extra ε query at the log-SNR midpoint.
Tensor dpm2_increment(const Tensor& z, std::span<const TimePoint> hi, std::span<const TimePoint> lo,
                      const EpsFn& eps, std::span<const Condition> cond,
                      const NoiseSchedule& schedule);

Tensor solver_increment(SolverKind kind, const Tensor& z, std::span<const TimePoint> hi,
                        std::span<const TimePoint> lo, const EpsFn& eps,
                        std::span<const Condition> cond, const NoiseSchedule& schedule);

// Ψ(z, t_{n_hi}, t_{n_lo}, c) on grid indices; requires n_lo ≤ n_hi per row.
Tensor psi(SolverKind kind, const NoiseSchedule& schedule, const EpsFn& eps, const Tensor& z,
           std::span<const std::size_t> n_hi, std::span<const std::size_t> n_lo,
           std::span<const Condition> cond);

/// ẑ = z + (1+ω)·Ψ(z, hi, lo, c) − ω·Ψ(z, hi, lo, ∅), per row.
/// The unconditional branch is skipped when every ω is zero.
Tensor cfg_target(SolverKind kind, const NoiseSchedule& schedule, const EpsFn& teacher,
                  const Tensor& z, std::span<const TimePoint> hi, std::span<const TimePoint> lo,
                  std::span<const Condition> cond, std::span<const double> omega);

Tensor cfg_target(SolverKind kind, const NoiseSchedule& schedule, const EpsFn& teacher,
                  const Tensor& z, std::span<const std::size_t> n_hi,
                  std::span<const std::size_t> n_lo, std::span<const Condition> cond,
                  std::span<const double> omega);

// Closed-form PF-ODE transport for Gaussian data:
// z_lo = α_lo·m + (γ_lo/γ_hi)(z_hi − α_hi·m).
Tensor oracle_flow(const Tensor& z, const TimePoint& hi, const TimePoint& lo,
                   const GaussianOracle& oracle);
Tensor oracle_flow(const Tensor& z, std::size_t n_hi, std::size_t n_lo, const GaussianOracle& oracle,
                   const NoiseSchedule& schedule);

}  // namespace lcm
