#include "lcm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "lcm/errors.hpp"

namespace lcm {

namespace {

double sq_dist(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.cols();
  const auto ad = a.data();
  const auto bd = b.data();
  double acc = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double diff = ad[i * d + c] - bd[j * d + c];
    acc += diff * diff;
  }
  return acc;
}

void check_pair(const Tensor& x, const Tensor& y) {
  if (x.ndim() != 2 || y.ndim() != 2 || x.cols() != y.cols()) {
    throw DimensionError("sample sets must be 2-D with equal widths");
  }
  if (x.rows() < 2 || y.rows() < 2) throw InvalidArgument("MMD needs at least 2 samples per side");
}

}  // namespace

double median_heuristic_bandwidth(const Tensor& x, const Tensor& y) {
  check_pair(x, y);
  const std::size_t nx = x.rows(), ny = y.rows(), n = nx + ny;
  auto row = [&](std::size_t k) -> std::pair<const Tensor*, std::size_t> {
    return k < nx ? std::pair{&x, k} : std::pair{&y, k - nx};
  };
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [ti, ii] = row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto [tj, jj] = row(j);
      dists.push_back(std::sqrt(sq_dist(*ti, ii, *tj, jj)));
    }
  }
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid;
}

double mmd2(const Tensor& x, const Tensor& y, std::optional<double> bandwidth) {
  check_pair(x, y);
  const double h = bandwidth ? *bandwidth : median_heuristic_bandwidth(x, y);
  if (!(h > 0.0)) throw InvalidArgument("MMD bandwidth must be positive");
  const double inv = 1.0 / (2.0 * h * h);
  const std::size_t nx = x.rows(), ny = y.rows();

  double kxx = 0.0;
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = i + 1; j < nx; ++j) kxx += std::exp(-sq_dist(x, i, x, j) * inv);
  }
  kxx = 2.0 * kxx / (static_cast<double>(nx) * static_cast<double>(nx - 1));

  double kyy = 0.0;
  for (std::size_t i = 0; i < ny; ++i) {
    for (std::size_t j = i + 1; j < ny; ++j) kyy += std::exp(-sq_dist(y, i, y, j) * inv);
  }
  kyy = 2.0 * kyy / (static_cast<double>(ny) * static_cast<double>(ny - 1));

  double kxy = 0.0;
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) kxy += std::exp(-sq_dist(x, i, y, j) * inv);
  }
  kxy /= static_cast<double>(nx) * static_cast<double>(ny);
  return kxx + kyy - 2.0 * kxy;
}

std::vector<double> sample_mean(const Tensor& samples) {
  const std::size_t n = samples.rows(), d = samples.cols();
  std::vector<double> m(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) m[c] += samples.at(i, c);
  }
  for (auto& v : m) v /= static_cast<double>(n);
  return m;
}

Tensor sample_covariance(const Tensor& samples) {
  const std::size_t n = samples.rows(), d = samples.cols();
  if (n < 2) throw InvalidArgument("covariance needs at least 2 samples");
  const auto m = sample_mean(samples);
  std::vector<Scalar> cov(d * d, Scalar(0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        cov[a * d + b] += (samples.at(i, a) - m[a]) * (samples.at(i, b) - m[b]);
      }
    }
  }
  for (auto& v : cov) v /= static_cast<Scalar>(n - 1);
  return Tensor(Shape{d, d}, std::move(cov));
}

MomentsError moments_error(const Tensor& samples, const std::vector<double>& mean, const Tensor& cov) {
  if (samples.ndim() != 2 || samples.rows() < 2) {
    throw InvalidArgument("moments_error needs at least 2 samples");
  }
  const std::size_t d = samples.cols();
  if (mean.size() != d || cov.ndim() != 2 || cov.rows() != d || cov.cols() != d) {
    throw DimensionError("reference moments do not match sample width");
  }
  const auto m = sample_mean(samples);
  const Tensor c = sample_covariance(samples);
  MomentsError err;
  for (std::size_t a = 0; a < d; ++a) err.mean_error += (m[a] - mean[a]) * (m[a] - mean[a]);
  err.mean_error = std::sqrt(err.mean_error);
  for (std::size_t i = 0; i < d * d; ++i) {
    const double diff = c.data()[i] - cov.data()[i];
    err.cov_error += diff * diff;
  }
  err.cov_error = std::sqrt(err.cov_error);
  return err;
}

}  // namespace lcm
