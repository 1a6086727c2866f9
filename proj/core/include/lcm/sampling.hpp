#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lcm/condition.hpp"
#include "lcm/denoiser.hpp"
#include "lcm/schedule.hpp"
#include "lcm/solvers.hpp"
#include "lcm/tensor.hpp"

namespace lcm {

inline constexpr std::size_t kDefaultLcmSteps = 4;

/// Descending inference timesteps τ_S > … > τ_1 with τ_i = ⌈i·N/S⌉, so τ_S = N.
class StepSchedule {
 public:
  StepSchedule(std::size_t steps, std::size_t total);

  std::size_t size() const { return indices_.size(); }
  // Descending order: front() == N.
  const std::vector<std::size_t>& indices() const { return indices_; }

 private:
  std::vector<std::size_t> indices_;
};

/// Multistep consistency sampling. Start at z ~ N(0, I) at τ_S; at each stage
/// x̂₀ = f_θ(z, ω, c, τ_i) and, unless it is the last stage, re-noise with
/// fresh ε to τ_{i−1}. Row i draws its noise from stream (seed, i), so
/// results do not depend on batch composition.
Tensor lcm_multistep_sample(const DenoiserNet& net, const LoraAdapter* adapter,
                            const ConsistencyHead& head, const NoiseSchedule& schedule,
                            const StepSchedule& steps, double omega,
                            std::span<const Condition> cond, std::uint64_t seed);

// Consistency function used by lcm_multistep_sample; swappable for oracle tests.
using ConsistencyFn = std::function<Tensor(const Tensor& z, std::size_t n)>;

Tensor lcm_multistep_sample(const ConsistencyFn& f, const NoiseSchedule& schedule,
                            const StepSchedule& steps, std::size_t dim, std::size_t count,
                            std::uint64_t seed);

/// Guided baseline: from z ~ N(0, I) at τ_S, apply cfg_target between
/// consecutive τ's, then return x̂₀ from the guided ε at τ_1.
Tensor ddim_sample(const EpsFn& teacher, const NoiseSchedule& schedule, const StepSchedule& steps,
                   double omega, std::span<const Condition> cond, std::uint64_t seed,
                   std::size_t dim, SolverKind solver = SolverKind::kDdim);

// Starting noise shared by both samplers: row i from stream (seed, "init", i).
Tensor initial_noise(std::size_t count, std::size_t dim, std::uint64_t seed);

}  // namespace lcm
