#include <cmath>

#include <gtest/gtest.h>

#include "lcm/errors.hpp"
#include "lcm/rng.hpp"
#include "lcm/schedule.hpp"

namespace lcm {
namespace {

TEST(Schedule, TwoStepHandExample) {
  const NoiseSchedule s = NoiseSchedule::linear(2, 0.1, 0.2);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.72, 1e-15);
  EXPECT_NEAR(s.sigma(2), std::sqrt(0.28), 1e-15);
  EXPECT_DOUBLE_EQ(s.time(1), 0.5);
  EXPECT_DOUBLE_EQ(s.time(2), 1.0);
}

TEST(Schedule, ConstantBetaIsGeometric) {
  const double beta = 0.03;
  const NoiseSchedule s = NoiseSchedule::linear(20, beta, beta);
  for (std::size_t n = 1; n <= 20; ++n) EXPECT_NEAR(s.alpha_bar(n), std::pow(1 - beta, n), 1e-14);
}

TEST(Schedule, VariancePreservingAndMonotone) {
  const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  EXPECT_LT(s.alpha_bar(1), 1.0);
  EXPECT_GT(s.alpha_bar(50), 0.0);
  for (std::size_t n = 1; n <= 50; ++n) {
    EXPECT_NEAR(s.alpha(n) * s.alpha(n) + s.sigma(n) * s.sigma(n), 1.0, 1e-12);
    EXPECT_GT(s.beta(n), 0.0);
    EXPECT_LT(s.beta(n), 1.0);
    if (n > 1) {
      EXPECT_LT(s.alpha_bar(n), s.alpha_bar(n - 1));
      EXPECT_GT(s.sigma(n), s.sigma(n - 1));
    }
  }
}

TEST(Schedule, InvalidParametersRejected) {
  EXPECT_THROW(NoiseSchedule::linear(0, 1e-4, 0.05), ScheduleError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.05, 1e-4), ScheduleError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.0, 0.05), ScheduleError);
  EXPECT_THROW(NoiseSchedule::linear(10, 1e-4, 1.0), ScheduleError);
  const NoiseSchedule s = NoiseSchedule::linear(10, 1e-4, 0.05);
  EXPECT_THROW(s.alpha(0), InvalidArgument);
  EXPECT_THROW(s.alpha(11), InvalidArgument);
}

TEST(Schedule, LogSnrLookupIsExactOnGrid) {
  const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  for (std::size_t n : {1u, 7u, 25u, 50u}) {
    const TimePoint p = s.at_log_snr(s.at(n).log_snr());
    EXPECT_NEAR(p.alpha, s.alpha(n), 1e-12);
    EXPECT_NEAR(p.sigma, s.sigma(n), 1e-12);
    EXPECT_NEAR(p.t, s.time(n), 1e-12);
  }
}

TEST(AddNoise, ClosedFormCases) {
  const NoiseSchedule s = NoiseSchedule::linear(2, 0.1, 0.2);
  const Tensor z = Tensor::matrix({{1, 0}});
  const Tensor eps = Tensor::matrix({{0, 1}});
  const Tensor out = add_noise(z, 2, eps, s);
  EXPECT_NEAR(out.at(0), std::sqrt(0.72), 1e-15);
  EXPECT_NEAR(out.at(1), std::sqrt(0.28), 1e-15);

  const Tensor zero = Tensor::zeros({1, 2});
  EXPECT_NEAR(add_noise(zero, 1, eps, s).at(1), s.sigma(1), 1e-15);
  EXPECT_NEAR(add_noise(z, 1, zero, s).at(0), s.alpha(1), 1e-15);
}

TEST(AddNoise, PreservesUnitVariance) {
  const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  const std::size_t count = 100000;
  Rng rng(3);
  std::vector<Scalar> z(count), e(count);
  for (std::size_t i = 0; i < count; ++i) {
    z[i] = static_cast<Scalar>(rng.normal());
    e[i] = static_cast<Scalar>(rng.normal());
  }
  const Tensor out = add_noise(Tensor({count, 1}, z), 30, Tensor({count, 1}, e), s);
  double m = 0, v = 0;
  for (const Scalar x : out.data()) m += x;
  m /= count;
  for (const Scalar x : out.data()) v += (x - m) * (x - m);
  v /= count - 1;
  // Standard error of the sample variance of a unit Gaussian is sqrt(2/n).
  EXPECT_NEAR(v, 1.0, 3.0 * std::sqrt(2.0 / count));
}

TEST(AddNoise, PerRowTimesteps) {
  const NoiseSchedule s = NoiseSchedule::linear(10, 1e-3, 0.1);
  const Tensor z = Tensor::matrix({{1, 1}, {1, 1}});
  const Tensor eps = Tensor::matrix({{0, 0}, {0, 0}});
  const std::vector<std::size_t> n = {2, 9};
  const Tensor out = add_noise(z, n, eps, s);
  EXPECT_DOUBLE_EQ(out.at(0, 0), s.alpha(2));
  EXPECT_DOUBLE_EQ(out.at(1, 1), s.alpha(9));
}

}  // namespace
}  // namespace lcm
