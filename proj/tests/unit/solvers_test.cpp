#include <cmath>

#include <gtest/gtest.h>

#include "lcm/errors.hpp"
#include "lcm/solvers.hpp"
#include "test_support.hpp"

namespace lcm {
namespace {

using testing::random_tensor;

const NoiseSchedule& sched() {
  static const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  return s;
}

GaussianOracle shifted() { return GaussianOracle{{2.0, 0.0}, 0.5}; }

std::vector<Condition> conds(std::size_t rows, Condition c = Condition::of(0)) {
  return std::vector<Condition>(rows, c);
}

// ODE in ρ = σ/α, y = z/α: dy/dρ = ε(αy, t). Classic RK4 with `steps` steps.
Tensor rk4_flow(const Tensor& z, const TimePoint& hi, const TimePoint& lo, const GaussianOracle& o,
                std::size_t steps) {
  const std::size_t rows = z.rows();
  auto point = [&](double rho) { return vp_point_from_log_snr(-std::log(rho), 0.0); };
  auto f = [&](const std::vector<double>& y, double rho) {
    const TimePoint tp = point(rho);
    std::vector<Scalar> zz(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) zz[i] = static_cast<Scalar>(tp.alpha * y[i]);
    const std::vector<TimePoint> times(rows, tp);
    const Tensor e = o.eps(Tensor(z.shape(), std::move(zz)), times);
    return std::vector<double>(e.data().begin(), e.data().end());
  };
  std::vector<double> y(z.data().begin(), z.data().end());
  for (auto& v : y) v /= hi.alpha;
  const double r0 = hi.sigma / hi.alpha, r1 = lo.sigma / lo.alpha;
  const double h = (r1 - r0) / static_cast<double>(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const double r = r0 + h * static_cast<double>(s);
    auto axpy = [&](const std::vector<double>& k, double c) {
      std::vector<double> out(y);
      for (std::size_t i = 0; i < y.size(); ++i) out[i] += c * k[i];
      return out;
    };
    const auto k1 = f(y, r);
    const auto k2 = f(axpy(k1, h / 2), r + h / 2);
    const auto k3 = f(axpy(k2, h / 2), r + h / 2);
    const auto k4 = f(axpy(k3, h), r + h);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  }
  std::vector<Scalar> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = static_cast<Scalar>(lo.alpha * y[i]);
  return Tensor(z.shape(), std::move(out));
}

TEST(Oracle, StationaryUnitGaussian) {
  const GaussianOracle unit{{0.0, 0.0}, 1.0};
  Rng rng(1);
  const Tensor z = random_tensor({5, 2}, rng);
  const Tensor out = oracle_flow(z, 40, 3, unit, sched());
  EXPECT_LT(testing::max_abs_diff(out, z), 1e-14);
  EXPECT_EQ(unit.gamma_sq(sched().at(17)), unit.gamma_sq(sched().at(17)));
  EXPECT_NEAR(unit.gamma_sq(sched().at(17)), 1.0, 1e-14);
}

TEST(Oracle, EqualEndpointsLeaveZUnchanged) {
  Rng rng(2);
  const Tensor z = random_tensor({4, 2}, rng);
  EXPECT_TRUE(testing::bit_equal(oracle_flow(z, 12, 12, shifted(), sched()), z));
}

TEST(Oracle, ClosedFormMatchesFineIntegration) {
  Rng rng(3);
  const Tensor z = random_tensor({6, 2}, rng, 0.8);
  for (const auto& [hi, lo] : {std::pair{50, 1}, std::pair{30, 10}, std::pair{8, 2}}) {
    const Tensor exact = oracle_flow(z, hi, lo, shifted(), sched());
    const Tensor fine = rk4_flow(z, sched().at(hi), sched().at(lo), shifted(), 10000);
    EXPECT_LT(testing::max_abs_diff(exact, fine), 1e-6) << hi << "->" << lo;
  }
}

TEST(Oracle, EpsInvertsPosteriorMean) {
  Rng rng(4);
  const Tensor z = random_tensor({3, 2}, rng);
  const TimePoint tp = sched().at(25);
  const std::vector<TimePoint> times(3, tp);
  const Tensor eps = shifted().eps(z, times);
  const Tensor x0 = shifted().posterior_mean(z, times);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(z.data()[i], tp.alpha * x0.data()[i] + tp.sigma * eps.data()[i], 1e-12);
  }
}

TEST(Increments, EqualEndpointsAreExactlyZero) {
  Rng rng(5);
  const Tensor z = random_tensor({4, 2}, rng);
  const EpsFn eps = shifted().as_eps_fn();
  const std::vector<std::size_t> n(4, 17);
  for (const SolverKind kind : {SolverKind::kDdim, SolverKind::kDpm2}) {
    const Tensor p = psi(kind, sched(), eps, z, n, n, conds(4));
    for (const Scalar v : p.data()) EXPECT_EQ(v, 0);
  }
  const std::vector<TimePoint> t(4, sched().at(9));
  const Tensor step = ddim_increment(z, t, t, random_tensor({4, 2}, rng));
  for (const Scalar v : step.data()) EXPECT_EQ(v, 0);
}

TEST(Increments, RejectsReversedEndpoints) {
  const Tensor z = Tensor::zeros({1, 2});
  const std::vector<std::size_t> hi{3}, lo{4};
  EXPECT_THROW(psi(SolverKind::kDdim, sched(), shifted().as_eps_fn(), z, hi, lo, conds(1)), InvalidArgument);
}

TEST(Increments, DdimIsExactForSingleGaussianLimit) {
  // A point mass (s → 0) has ε linear in z with the DDIM step exact.
  const GaussianOracle point{{1.0, -1.0}, 1e-9};
  Rng rng(6);
  const Tensor z = random_tensor({4, 2}, rng);
  const std::vector<std::size_t> hi(4, 40), lo(4, 5);
  const Tensor p = psi(SolverKind::kDdim, sched(), point.as_eps_fn(), z, hi, lo, conds(4));
  const Tensor exact = oracle_flow(z, 40, 5, point, sched());
  EXPECT_LT(testing::max_abs_diff(add(z, p), exact), 1e-6);
}

double endpoint_error(SolverKind kind, std::size_t steps, std::uint64_t seed) {
  const NoiseSchedule& s = sched();
  Rng rng(seed);
  const Tensor z0 = random_tensor({64, 2}, rng);
  const EpsFn eps = shifted().as_eps_fn();
  const double l0 = s.at(50).log_snr(), l1 = s.at(1).log_snr();
  Tensor z = z0;
  const std::vector<Condition> c = conds(64);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::vector<TimePoint> hi(64, s.at_log_snr(l0 + (l1 - l0) * double(i) / double(steps)));
    const std::vector<TimePoint> lo(64, s.at_log_snr(l0 + (l1 - l0) * double(i + 1) / double(steps)));
    z = add(z, solver_increment(kind, z, hi, lo, eps, c, s));
  }
  return testing::max_abs_diff(z, oracle_flow(z0, 50, 1, shifted(), s));
}

TEST(Increments, ConvergenceOrders) {
  const double ddim = endpoint_error(SolverKind::kDdim, 16, 7) / endpoint_error(SolverKind::kDdim, 32, 7);
  const double dpm2 = endpoint_error(SolverKind::kDpm2, 16, 7) / endpoint_error(SolverKind::kDpm2, 32, 7);
  EXPECT_GT(ddim, 1.7);
  EXPECT_LT(ddim, 2.3);
  EXPECT_GT(dpm2, 3.4);
  EXPECT_LT(dpm2, 4.6);
}

// ε that depends on z and time but never on the condition.
EpsFn condition_blind() {
  return [](const Tensor& z, std::span<const TimePoint> t, std::span<const Condition>) {
    std::vector<Scalar> v(z.numel());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t j = 0; j < z.cols(); ++j) {
        v[i * z.cols() + j] = static_cast<Scalar>(std::sin(z.at(i, j) + t[i].t) * 0.7);
      }
    }
    return Tensor(z.shape(), std::move(v));
  };
}

// ε whose conditional and unconditional branches differ.
EpsFn condition_aware(std::size_t* null_rows = nullptr) {
  return [null_rows](const Tensor& z, std::span<const TimePoint> t, std::span<const Condition> c) {
    std::vector<Scalar> v(z.numel());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const double shift = c[i].is_null() ? 0.0 : 0.3 * (1 + c[i].id());
      if (c[i].is_null() && null_rows != nullptr) ++*null_rows;
      for (std::size_t j = 0; j < z.cols(); ++j) {
        v[i * z.cols() + j] = static_cast<Scalar>(0.5 * z.at(i, j) - shift * t[i].sigma);
      }
    }
    return Tensor(z.shape(), std::move(v));
  };
}

TEST(Cfg, ZeroGuidanceIsConditionalStep) {
  Rng rng(8);
  const Tensor z = random_tensor({6, 2}, rng);
  const std::vector<std::size_t> hi(6, 30), lo(6, 25);
  const std::vector<double> w(6, 0.0);
  for (const SolverKind kind : {SolverKind::kDdim, SolverKind::kDpm2}) {
    std::size_t null_rows = 0;
    const EpsFn eps = condition_aware(&null_rows);
    const Tensor got = cfg_target(kind, sched(), eps, z, hi, lo, conds(6, Condition::of(1)), w);
    const Tensor want = add(z, psi(kind, sched(), eps, z, hi, lo, conds(6, Condition::of(1))));
    EXPECT_TRUE(testing::bit_equal(got, want));
    EXPECT_EQ(null_rows, 0u);
  }
}

TEST(Cfg, IdenticalBranchesMakeGuidanceIrrelevant) {
  Rng rng(9);
  const Tensor z = random_tensor({6, 2}, rng);
  const std::vector<std::size_t> hi(6, 44), lo(6, 39);
  for (const SolverKind kind : {SolverKind::kDdim, SolverKind::kDpm2}) {
    const Tensor ref = cfg_target(kind, sched(), condition_blind(), z, hi, lo, conds(6),
                                  std::vector<double>(6, 0.0));
    for (const double omega : {1.0, 2.0, 7.5, 14.0}) {
      const Tensor got = cfg_target(kind, sched(), condition_blind(), z, hi, lo, conds(6),
                                    std::vector<double>(6, omega));
      EXPECT_TRUE(testing::bit_equal(got, ref)) << omega;
    }
  }
}

TEST(Cfg, MatchesGuidedCombination) {
  Rng rng(10);
  const Tensor z = random_tensor({5, 2}, rng);
  const std::vector<std::size_t> hi{50, 40, 30, 20, 10}, lo{45, 35, 25, 15, 5};
  const std::vector<double> w{0.0, 1.0, 2.5, 7.5, 12.0};
  const EpsFn eps = condition_aware();
  const Tensor got = cfg_target(SolverKind::kDdim, sched(), eps, z, hi, lo, conds(5, Condition::of(2)), w);
  const Tensor pc = psi(SolverKind::kDdim, sched(), eps, z, hi, lo, conds(5, Condition::of(2)));
  const Tensor pu = psi(SolverKind::kDdim, sched(), eps, z, hi, lo, conds(5, Condition::null()));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      const double want = z.at(i, j) + (1 + w[i]) * pc.at(i, j) - w[i] * pu.at(i, j);
      EXPECT_NEAR(got.at(i, j), want, 1e-12);
    }
  }
}

TEST(Solvers, NamesRoundTrip) {
  EXPECT_EQ(parse_solver_kind("ddim"), SolverKind::kDdim);
  EXPECT_EQ(parse_solver_kind(to_string(SolverKind::kDpm2)), SolverKind::kDpm2);
  EXPECT_THROW(parse_solver_kind("euler"), InvalidArgument);
}

}  // namespace
}  // namespace lcm
