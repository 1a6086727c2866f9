#include "lcm/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "lcm/errors.hpp"

namespace lcm {

double TimePoint::log_snr() const { return std::log(alpha / sigma); }

TimePoint vp_point_from_log_snr(double lambda, double t) {
  // sigmoid(±2λ) without overflow for large |λ|.
  const double a2 = 1.0 / (1.0 + std::exp(-2.0 * lambda));
  const double s2 = 1.0 / (1.0 + std::exp(2.0 * lambda));
  return TimePoint{t, std::sqrt(a2), std::sqrt(s2)};
}

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_min, double beta_max) {
  if (steps < 2) throw ScheduleError("schedule needs at least 2 timesteps");
  if (!(beta_min > 0.0 && beta_min < 1.0) || !(beta_max > 0.0 && beta_max < 1.0)) {
    throw ScheduleError("beta values must lie in (0, 1)");
  }
  if (beta_min > beta_max) throw ScheduleError("beta_min must not exceed beta_max");
  std::vector<double> beta(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    beta[i] = beta_min + (beta_max - beta_min) * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  return NoiseSchedule(std::move(beta), beta_min, beta_max);
}

NoiseSchedule::NoiseSchedule(std::vector<double> beta, double beta_min, double beta_max)
    : beta_(std::move(beta)), beta_min_(beta_min), beta_max_(beta_max) {
  alpha_bar_.resize(beta_.size());
  log_snr_.resize(beta_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < beta_.size(); ++i) {
    prod *= 1.0 - beta_[i];
    alpha_bar_[i] = prod;
    log_snr_[i] = 0.5 * std::log(prod / (1.0 - prod));
  }
}

void NoiseSchedule::check_index(std::size_t n) const {
  if (n < 1 || n > beta_.size()) {
    throw InvalidArgument("timestep index " + std::to_string(n) + " outside [1, " +
                          std::to_string(beta_.size()) + "]");
  }
}

double NoiseSchedule::beta(std::size_t n) const {
  check_index(n);
  return beta_[n - 1];
}

double NoiseSchedule::alpha_bar(std::size_t n) const {
  check_index(n);
  return alpha_bar_[n - 1];
}

double NoiseSchedule::alpha(std::size_t n) const { return std::sqrt(alpha_bar(n)); }

double NoiseSchedule::sigma(std::size_t n) const { return std::sqrt(1.0 - alpha_bar(n)); }

double NoiseSchedule::time(std::size_t n) const {
  check_index(n);
  return static_cast<double>(n) / static_cast<double>(beta_.size());
}

TimePoint NoiseSchedule::at(std::size_t n) const { return TimePoint{time(n), alpha(n), sigma(n)}; }

TimePoint NoiseSchedule::at_log_snr(double lambda) const {
  // log_snr_ is strictly decreasing in n; find the bracketing segment.
  const std::size_t count = log_snr_.size();
  std::size_t hi = 1;
  while (hi < count - 1 && log_snr_[hi] > lambda) ++hi;
  const std::size_t lo = hi - 1;
  const double frac = (log_snr_[lo] - lambda) / (log_snr_[lo] - log_snr_[hi]);
  const double n = static_cast<double>(lo + 1) + frac;
  const double t = std::clamp(n / static_cast<double>(count), 0.0, 1.0);
  return vp_point_from_log_snr(lambda, t);
}

Tensor add_noise(const Tensor& z, std::size_t n, const Tensor& eps, const NoiseSchedule& schedule) {
  if (z.shape() != eps.shape()) {
    throw DimensionError("add_noise: z " + shape_string(z.shape()) + " vs eps " +
                         shape_string(eps.shape()));
  }
  const double a = schedule.alpha(n);
  const double s = schedule.sigma(n);
  std::vector<Scalar> out(z.numel());
  const auto zd = z.data();
  const auto ed = eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<Scalar>(a * zd[i] + s * ed[i]);
  }
  return Tensor(z.shape(), std::move(out));
}

Tensor add_noise(const Tensor& z, std::span<const std::size_t> n, const Tensor& eps,
                 const NoiseSchedule& schedule) {
  if (z.shape() != eps.shape()) {
    throw DimensionError("add_noise: z " + shape_string(z.shape()) + " vs eps " +
                         shape_string(eps.shape()));
  }
  const std::size_t rows = z.rows(), cols = z.cols();
  if (n.size() != rows) throw DimensionError("add_noise: one timestep per row required");
  std::vector<Scalar> out(z.numel());
  const auto zd = z.data();
  const auto ed = eps.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double a = schedule.alpha(n[r]);
    const double s = schedule.sigma(n[r]);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      out[i] = static_cast<Scalar>(a * zd[i] + s * ed[i]);
    }
  }
  return Tensor(z.shape(), std::move(out));
}

}  // namespace lcm
