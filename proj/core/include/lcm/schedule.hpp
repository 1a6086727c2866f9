#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lcm/tensor.hpp"

namespace lcm {

/// A point on the diffusion time axis: normalized time plus its VP
/// coefficients. Off-grid points (solver midpoints) are valid too.
struct TimePoint {
  double t = 0.0;
  double alpha = 1.0;
  double sigma = 0.0;

  double log_snr() const;  // λ = log(α/σ)
};

// VP coefficients for a given log-SNR: α² = sigmoid(2λ), σ² = sigmoid(−2λ).
TimePoint vp_point_from_log_snr(double lambda, double t);

/// Discrete variance-preserving schedule with linearly spaced betas.
/// Timestep indices are 1-based: n ∈ [1, N], t_n = n/N.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(std::size_t steps, double beta_min, double beta_max);

  std::size_t steps() const { return beta_.size(); }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }

  double beta(std::size_t n) const;
  double alpha_bar(std::size_t n) const;
  double alpha(std::size_t n) const;
  double sigma(std::size_t n) const;
  double time(std::size_t n) const;
  double t_min() const { return time(1); }

  TimePoint at(std::size_t n) const;
  // Exact VP coefficients for λ; the normalized time is interpolated
  // piecewise-linearly in λ between grid points.
  TimePoint at_log_snr(double lambda) const;

 private:
  NoiseSchedule(std::vector<double> beta, double beta_min, double beta_max);
  void check_index(std::size_t n) const;

  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  std::vector<double> log_snr_;
  double beta_min_;
  double beta_max_;
};

// α(t_n)·z + σ(t_n)·ε
Tensor add_noise(const Tensor& z, std::size_t n, const Tensor& eps, const NoiseSchedule& schedule);
// Row-wise variant: row i is noised to timestep n[i].
Tensor add_noise(const Tensor& z, std::span<const std::size_t> n, const Tensor& eps,
                 const NoiseSchedule& schedule);

}  // namespace lcm
