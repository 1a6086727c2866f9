#include <cmath>

#include <gtest/gtest.h>

#include "lcm/datasets.hpp"
#include "lcm/errors.hpp"
#include "lcm/metrics.hpp"
#include "test_support.hpp"

namespace lcm {
namespace {

using testing::random_tensor;

Tensor shifted(const Tensor& x, double dx) {
  std::vector<Scalar> v(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < v.size(); i += x.cols()) v[i] += static_cast<Scalar>(dx);
  return Tensor(x.shape(), std::move(v));
}

TEST(Mmd, SameDistributionIsNearZero) {
  const DatasetSpec spec;
  const Tensor x = make_dataset(spec, 2000, 1).x;
  const Tensor y = make_dataset(spec, 2000, 2).x;
  EXPECT_LT(std::fabs(mmd2(x, y)), 0.005);
  EXPECT_LT(std::fabs(mmd2(x, y, 0.5)), 0.005);
}

TEST(Mmd, IdenticalSetsGiveClosedFormNonPositiveValue) {
  Rng rng(3);
  const Tensor x = random_tensor({300, 2}, rng);
  const double h = median_heuristic_bandwidth(x, x);
  const double got = mmd2(x, x, h);
  // Oracle: with X = Y the unbiased estimate is (2/n)(mean off-diagonal kernel − 1).
  const std::size_t n = x.rows();
  double off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = x.at(i, 0) - x.at(j, 0), dy = x.at(i, 1) - x.at(j, 1);
      off += std::exp(-(dx * dx + dy * dy) / (2 * h * h));
    }
  }
  off /= double(n) * double(n - 1);
  EXPECT_LE(got, 0.0);
  EXPECT_NEAR(got, 2.0 / n * (off - 1.0), 1e-12);
}

TEST(Mmd, DistantClustersLoseCrossTerms) {
  Rng rng(4);
  const Tensor x = random_tensor({200, 2}, rng, 0.1);
  const Tensor y = shifted(random_tensor({150, 2}, rng, 0.1), 100.0);
  const double h = 0.3;
  auto within = [&](const Tensor& s) {
    double acc = 0;
    const std::size_t n = s.rows();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double dx = s.at(i, 0) - s.at(j, 0), dy = s.at(i, 1) - s.at(j, 1);
        acc += std::exp(-(dx * dx + dy * dy) / (2 * h * h));
      }
    }
    return acc / (double(n) * double(n - 1));
  };
  EXPECT_NEAR(mmd2(x, y, h), within(x) + within(y), 1e-12);
}

TEST(Mmd, DetectsShift) {
  Rng rng(5);
  const Tensor x = random_tensor({500, 2}, rng);
  const Tensor y = shifted(random_tensor({500, 2}, rng), 1.0);
  EXPECT_GT(mmd2(x, y), 0.05);
}

TEST(Mmd, MedianBandwidthOfKnownSet) {
  const Tensor x = Tensor::matrix({{0, 0}, {1, 0}});
  const Tensor y = Tensor::matrix({{0, 3}, {0, 7}});
  // Pairwise distances 1, 3, √10, 4, 7, √50: the two middle values are √10 and 4.
  const double h = median_heuristic_bandwidth(x, y);
  EXPECT_TRUE(h == std::sqrt(10.0) || h == 4.0) << h;
}

TEST(Mmd, RejectsBadInput) {
  const Tensor x = Tensor::matrix({{0, 0}, {1, 0}});
  EXPECT_THROW(mmd2(x, Tensor::matrix({{0, 0, 1}, {1, 1, 1}})), DimensionError);
  EXPECT_THROW(mmd2(x, Tensor::matrix({{0, 0}})), InvalidArgument);
  EXPECT_THROW(mmd2(x, x, 0.0), InvalidArgument);
}

TEST(Moments, ExactSamplesAtMean) {
  const Tensor s = Tensor::matrix({{1, 2}, {1, 2}, {1, 2}});
  const Tensor cov = Tensor::matrix({{1, 0.5}, {0.5, 2}});
  const MomentsError e = moments_error(s, {1, 2}, cov);
  EXPECT_EQ(e.mean_error, 0.0);
  EXPECT_NEAR(e.cov_error, std::sqrt(1 + 0.25 + 0.25 + 4), 1e-15);
}

TEST(Moments, SymmetricPairHasZeroMeanError) {
  const Tensor s = Tensor::matrix({{1.5, 1}, {0.5, 3}});
  EXPECT_EQ(moments_error(s, {1, 2}, Tensor::matrix({{1, 0}, {0, 1}})).mean_error, 0.0);
}

TEST(Moments, UnitGaussianWithinClt) {
  Rng rng(6);
  const Tensor s = random_tensor({100000, 2}, rng);
  const MomentsError e = moments_error(s, {0, 0}, Tensor::matrix({{1, 0}, {0, 1}}));
  EXPECT_LT(e.mean_error, 0.02);
  EXPECT_LT(e.cov_error, 0.05);
}

TEST(Moments, CovarianceIsUnbiased) {
  const Tensor s = Tensor::matrix({{0, 0}, {2, 2}});
  const Tensor c = sample_covariance(s);
  EXPECT_EQ(c.at(0, 0), 2.0);
  EXPECT_EQ(c.at(0, 1), 2.0);
}

}  // namespace
}  // namespace lcm
