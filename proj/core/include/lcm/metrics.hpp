#pragma once

#include <optional>
#include <vector>

#include "lcm/tensor.hpp"

namespace lcm {

// Median pairwise Euclidean distance over the rows of X ∪ Y.
double median_heuristic_bandwidth(const Tensor& x, const Tensor& y);

/// Unbiased MMD² with RBF kernel k(a, b) = exp(−‖a − b‖²/(2h²)). Diagonal
/// terms are excluded from the within-sample means. h defaults to the median
/// heuristic.
double mmd2(const Tensor& x, const Tensor& y, std::optional<double> bandwidth = std::nullopt);

struct MomentsError {
  double mean_error = 0.0;  // ‖μ̂ − m‖₂
  double cov_error = 0.0;   // ‖Σ̂ − Σ‖_F, unbiased Σ̂
};

MomentsError moments_error(const Tensor& samples, const std::vector<double>& mean,
                           const Tensor& cov);

std::vector<double> sample_mean(const Tensor& samples);
Tensor sample_covariance(const Tensor& samples);

}  // namespace lcm
