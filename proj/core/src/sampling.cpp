#include "lcm/sampling.hpp"

#include "lcm/errors.hpp"
#include "lcm/rng.hpp"

namespace lcm {

StepSchedule::StepSchedule(std::size_t steps, std::size_t total) {
  if (steps < 1) throw InvalidArgument("step schedule needs at least one step");
  if (steps > total) {
    throw InvalidArgument("cannot take " + std::to_string(steps) + " steps on a " +
                          std::to_string(total) + "-step schedule");
  }
  for (std::size_t i = steps; i >= 1; --i) indices_.push_back((i * total + steps - 1) / steps);
}

Tensor initial_noise(std::size_t count, std::size_t dim, std::uint64_t seed) {
  if (count == 0) throw InvalidArgument("sample count must be positive");
  std::vector<Scalar> values(count * dim);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, "init", i);
    for (std::size_t c = 0; c < dim; ++c) values[i * dim + c] = static_cast<Scalar>(rng.normal());
  }
  return Tensor(Shape{count, dim}, std::move(values));
}

Tensor lcm_multistep_sample(const ConsistencyFn& f, const NoiseSchedule& schedule,
                            const StepSchedule& steps, std::size_t dim, std::size_t count,
                            std::uint64_t seed) {
  Tensor z = initial_noise(count, dim, seed);
  std::vector<Rng> renoise;
  renoise.reserve(count);
  for (std::size_t i = 0; i < count; ++i) renoise.emplace_back(seed, "renoise", i);

  const auto& tau = steps.indices();
  Tensor x0;
  for (std::size_t s = 0; s < tau.size(); ++s) {
    x0 = f(z, tau[s]);
    if (s + 1 == tau.size()) break;
    const double a = schedule.alpha(tau[s + 1]);
    const double sg = schedule.sigma(tau[s + 1]);
    std::vector<Scalar> next(count * dim);
    const auto xd = x0.data();
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t c = 0; c < dim; ++c) {
        next[i * dim + c] = static_cast<Scalar>(a * xd[i * dim + c] + sg * renoise[i].normal());
      }
    }
    z = Tensor(Shape{count, dim}, std::move(next));
  }
  return x0;
}

Tensor lcm_multistep_sample(const DenoiserNet& net, const LoraAdapter* adapter,
                            const ConsistencyHead& head, const NoiseSchedule& schedule,
                            const StepSchedule& steps, double omega,
                            std::span<const Condition> cond, std::uint64_t seed) {
  const std::vector<double> omegas(cond.size(), omega);
  const ConsistencyFn f = [&](const Tensor& z, std::size_t n) {
    NoGradScope no_grad;
    const std::vector<std::size_t> ns(cond.size(), n);
    return consistency_forward(net, head, schedule, z, ns, omegas, cond, adapter);
  };
  return lcm_multistep_sample(f, schedule, steps, net.config().data_dim, cond.size(), seed);
}

Tensor ddim_sample(const EpsFn& teacher, const NoiseSchedule& schedule, const StepSchedule& steps,
                   double omega, std::span<const Condition> cond, std::uint64_t seed,
                   std::size_t dim, SolverKind solver) {
  if (!(omega >= 0.0)) throw InvalidArgument("guidance scale must be non-negative");
  NoGradScope no_grad;
  const std::size_t count = cond.size();
  Tensor z = initial_noise(count, dim, seed);
  const std::vector<double> omegas(count, omega);
  const auto& tau = steps.indices();
  for (std::size_t s = 0; s + 1 < tau.size(); ++s) {
    const std::vector<TimePoint> hi(count, schedule.at(tau[s]));
    const std::vector<TimePoint> lo(count, schedule.at(tau[s + 1]));
    z = cfg_target(solver, schedule, teacher, z, hi, lo, cond, omegas);
  }
  // Final jump to the clean endpoint using the guided ε at τ_1.
  const TimePoint last = schedule.at(tau.back());
  const std::vector<TimePoint> times(count, last);
  const Tensor eps_c = teacher(z, times, cond);
  Tensor eps_u;
  if (omega != 0.0) {
    const std::vector<Condition> null_cond(count, Condition::null());
    eps_u = teacher(z, times, null_cond);
  }
  const auto zd = z.data();
  const auto ec = eps_c.data();
  std::vector<Scalar> out(z.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double guided = omega == 0.0 ? ec[i] : ec[i] + omega * (ec[i] - eps_u.data()[i]);
    out[i] = static_cast<Scalar>((zd[i] - last.sigma * guided) / last.alpha);
  }
  return Tensor(z.shape(), std::move(out));
}

}  // namespace lcm
