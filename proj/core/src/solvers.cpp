#include "lcm/solvers.hpp"

#include <algorithm>
#include <cmath>

#include "lcm/denoiser.hpp"
#include "lcm/errors.hpp"

namespace lcm {

namespace {

constexpr double kAlphaGuard = 1e-6;

bool same_point(const TimePoint& a, const TimePoint& b) {
  return a.t == b.t && a.alpha == b.alpha && a.sigma == b.sigma;
}

void check_rows(const Tensor& z, std::size_t hi, std::size_t lo, const char* op) {
  if (z.ndim() != 2) throw DimensionError(std::string(op) + ": z must be 2-D");
  if (hi != z.rows() || lo != z.rows()) {
    throw DimensionError(std::string(op) + ": one time point per row required");
  }
}

void check_alpha(const TimePoint& tp) {
  if (tp.alpha < kAlphaGuard) {
    throw ScheduleError("alpha below 1e-6 at t=" + std::to_string(tp.t) + "; x0 recovery is singular");
  }
}

std::vector<TimePoint> grid_points(const NoiseSchedule& s, std::span<const std::size_t> n) {
  std::vector<TimePoint> out;
  out.reserve(n.size());
  for (auto idx : n) out.push_back(s.at(idx));
  return out;
}

}  // namespace

std::string_view to_string(SolverKind kind) {
  return kind == SolverKind::kDdim ? "ddim" : "dpm2";
}

SolverKind parse_solver_kind(std::string_view text) {
  if (text == "ddim") return SolverKind::kDdim;
  if (text == "dpm2") return SolverKind::kDpm2;
  throw InvalidArgument("unknown solver kind '" + std::string(text) + "' (expected ddim or dpm2)");
}

EpsFn teacher_eps(const DenoiserNet& net, const LoraAdapter* adapter, double omega_sentinel) {
  return [&net, adapter, omega_sentinel](const Tensor& z, std::span<const TimePoint> times,
                                         std::span<const Condition> cond) {
    Conditioning in;
    in.time.reserve(times.size());
    for (const auto& tp : times) in.time.push_back(tp.t);
    in.omega.assign(times.size(), omega_sentinel);
    in.cond.assign(cond.begin(), cond.end());
    return forward_eps(net, z, in, adapter);
  };
}

// ---- Gaussian oracle ------------------------------------------------------

double GaussianOracle::gamma_sq(const TimePoint& tp) const {
  // α²s² + σ² with σ² = 1 − α² substituted, so s = 1 gives exactly 1.
  return 1.0 + tp.alpha * tp.alpha * (scale * scale - 1.0);
}

Tensor GaussianOracle::eps(const Tensor& z, std::span<const TimePoint> times) const {
  check_rows(z, times.size(), times.size(), "GaussianOracle::eps");
  const std::size_t d = z.cols();
  if (mean.size() != d) throw DimensionError("oracle mean dimension mismatch");
  std::vector<Scalar> out(z.numel());
  const auto zd = z.data();
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const TimePoint& tp = times[r];
    const double g2 = gamma_sq(tp);
    for (std::size_t c = 0; c < d; ++c) {
      out[r * d + c] = static_cast<Scalar>(tp.sigma * (zd[r * d + c] - tp.alpha * mean[c]) / g2);
    }
  }
  return Tensor(z.shape(), std::move(out));
}

Tensor GaussianOracle::posterior_mean(const Tensor& z, std::span<const TimePoint> times) const {
  check_rows(z, times.size(), times.size(), "GaussianOracle::posterior_mean");
  const std::size_t d = z.cols();
  std::vector<Scalar> out(z.numel());
  const auto zd = z.data();
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const TimePoint& tp = times[r];
    const double shrink = tp.alpha * scale * scale / gamma_sq(tp);
    for (std::size_t c = 0; c < d; ++c) {
      out[r * d + c] = static_cast<Scalar>(mean[c] + shrink * (zd[r * d + c] - tp.alpha * mean[c]));
    }
  }
  return Tensor(z.shape(), std::move(out));
}

EpsFn GaussianOracle::as_eps_fn() const {
  return [oracle = *this](const Tensor& z, std::span<const TimePoint> times,
                          std::span<const Condition>) { return oracle.eps(z, times); };
}

// ---- solvers --------------------------------------------------------------

Tensor ddim_increment(const Tensor& z, std::span<const TimePoint> hi, std::span<const TimePoint> lo,
                      const Tensor& eps_hat) {
  check_rows(z, hi.size(), lo.size(), "ddim_increment");
  if (eps_hat.shape() != z.shape()) throw DimensionError("ddim_increment: eps shape mismatch");
  const std::size_t d = z.cols();
  std::vector<Scalar> out(z.numel(), Scalar(0));
  const auto zd = z.data();
  const auto ed = eps_hat.data();
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (same_point(hi[r], lo[r])) continue;
    if (lo[r].t > hi[r].t) throw InvalidArgument("ddim_increment: target time after source time");
    check_alpha(hi[r]);
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      const double x0 = (zd[i] - hi[r].sigma * ed[i]) / hi[r].alpha;
      out[i] = static_cast<Scalar>(lo[r].alpha * x0 + lo[r].sigma * ed[i] - zd[i]);
    }
  }
  return Tensor(z.shape(), std::move(out));
}

// DPM-Solver-2 in log-SNR time λ = log(α/σ), with h = λ_lo − λ_hi and the
// midpoint s at λ_hi + h/2:
//   u    = (α_s/α_hi)·z − σ_s·(e^{h/2} − 1)·ε(z, t_hi)
//   z_lo = (α_lo/α_hi)·z − σ_lo·(e^{h} − 1)·ε(u, s)
// This is the exponential-integrator solution of dz/dλ with ε held at the
// midpoint value, which cancels the O(h²) local term of the first-order (DDIM) step.
Tensor dpm2_increment(const Tensor& z, std::span<const TimePoint> hi, std::span<const TimePoint> lo,
                      const EpsFn& eps, std::span<const Condition> cond,
                      const NoiseSchedule& schedule) {
  check_rows(z, hi.size(), lo.size(), "dpm2_increment");
  const std::size_t rows = z.rows(), d = z.cols();
  std::vector<TimePoint> mid(rows);
  std::vector<double> h(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (same_point(hi[r], lo[r])) {
      mid[r] = hi[r];
      continue;
    }
    if (lo[r].t > hi[r].t) throw InvalidArgument("dpm2_increment: target time after source time");
    check_alpha(hi[r]);
    const double lam_hi = hi[r].log_snr();
    const double lam_lo = lo[r].sigma == 0.0 ? INFINITY : lo[r].log_snr();
    if (!std::isfinite(lam_lo)) throw InvalidArgument("dpm2_increment: target must have sigma > 0");
    h[r] = lam_lo - lam_hi;
    mid[r] = schedule.at_log_snr(lam_hi + 0.5 * h[r]);
  }
  const auto zd = z.data();
  const Tensor e_hi = eps(z, hi, cond);
  const auto ehd = e_hi.data();
  std::vector<Scalar> u(z.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double a = mid[r].alpha / hi[r].alpha;
    const double b = mid[r].sigma * std::expm1(0.5 * h[r]);
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      u[i] = static_cast<Scalar>(a * zd[i] - b * ehd[i]);
    }
  }
  const Tensor ut(z.shape(), std::move(u));
  const Tensor e_mid = eps(ut, mid, cond);
  const auto emd = e_mid.data();
  std::vector<Scalar> out(z.numel(), Scalar(0));
  for (std::size_t r = 0; r < rows; ++r) {
    if (same_point(hi[r], lo[r])) continue;
    const double a = lo[r].alpha / hi[r].alpha;
    const double b = lo[r].sigma * std::expm1(h[r]);
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      out[i] = static_cast<Scalar>(a * zd[i] - b * emd[i] - zd[i]);
    }
  }
  return Tensor(z.shape(), std::move(out));
}

Tensor solver_increment(SolverKind kind, const Tensor& z, std::span<const TimePoint> hi,
                        std::span<const TimePoint> lo, const EpsFn& eps,
                        std::span<const Condition> cond, const NoiseSchedule& schedule) {
  if (kind == SolverKind::kDdim) return ddim_increment(z, hi, lo, eps(z, hi, cond));
  return dpm2_increment(z, hi, lo, eps, cond, schedule);
}

Tensor psi(SolverKind kind, const NoiseSchedule& schedule, const EpsFn& eps, const Tensor& z,
           std::span<const std::size_t> n_hi, std::span<const std::size_t> n_lo,
           std::span<const Condition> cond) {
  for (std::size_t r = 0; r < n_hi.size() && r < n_lo.size(); ++r) {
    if (n_lo[r] > n_hi[r]) throw InvalidArgument("psi: n_lo must not exceed n_hi");
  }
  const auto hi = grid_points(schedule, n_hi);
  const auto lo = grid_points(schedule, n_lo);
  return solver_increment(kind, z, hi, lo, eps, cond, schedule);
}

Tensor cfg_target(SolverKind kind, const NoiseSchedule& schedule, const EpsFn& teacher,
                  const Tensor& z, std::span<const TimePoint> hi, std::span<const TimePoint> lo,
                  std::span<const Condition> cond, std::span<const double> omega) {
  check_rows(z, hi.size(), lo.size(), "cfg_target");
  if (cond.size() != z.rows() || omega.size() != z.rows()) {
    throw DimensionError("cfg_target: one condition and guidance scale per row required");
  }
  for (double w : omega) {
    if (!(w >= 0.0)) throw InvalidArgument("cfg_target: guidance scale must be non-negative");
  }
  const Tensor psi_c = solver_increment(kind, z, hi, lo, teacher, cond, schedule);
  const bool guided = std::any_of(omega.begin(), omega.end(), [](double w) { return w != 0.0; });
  const std::size_t d = z.cols();
  const auto zd = z.data();
  const auto pc = psi_c.data();
  std::vector<Scalar> out(z.numel());
  if (!guided) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = zd[i] + pc[i];
    return Tensor(z.shape(), std::move(out));
  }
  const std::vector<Condition> null_cond(z.rows(), Condition::null());
  const Tensor psi_u = solver_increment(kind, z, hi, lo, teacher, null_cond, schedule);
  // (1+ω)Ψ_c − ωΨ_∅ written as Ψ_c + ω(Ψ_c − Ψ_∅): identical branches then give
  // an ω-independent result bit for bit.
  const auto pu = psi_u.data();
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto w = static_cast<Scalar>(omega[r]);
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      out[i] = (zd[i] + pc[i]) + w * (pc[i] - pu[i]);
    }
  }
  return Tensor(z.shape(), std::move(out));
}

Tensor cfg_target(SolverKind kind, const NoiseSchedule& schedule, const EpsFn& teacher,
                  const Tensor& z, std::span<const std::size_t> n_hi,
                  std::span<const std::size_t> n_lo, std::span<const Condition> cond,
                  std::span<const double> omega) {
  for (std::size_t r = 0; r < n_hi.size() && r < n_lo.size(); ++r) {
    if (n_lo[r] > n_hi[r]) throw InvalidArgument("cfg_target: n_lo must not exceed n_hi");
  }
  const auto hi = grid_points(schedule, n_hi);
  const auto lo = grid_points(schedule, n_lo);
  return cfg_target(kind, schedule, teacher, z, hi, lo, cond, omega);
}

Tensor oracle_flow(const Tensor& z, const TimePoint& hi, const TimePoint& lo,
                   const GaussianOracle& oracle) {
  if (z.ndim() != 2 || z.cols() != oracle.mean.size()) {
    throw DimensionError("oracle_flow: z " + shape_string(z.shape()) + " vs oracle dimension " +
                         std::to_string(oracle.mean.size()));
  }
  if (same_point(hi, lo)) return z.clone();
  const double ratio = std::sqrt(oracle.gamma_sq(lo) / oracle.gamma_sq(hi));
  const std::size_t d = z.cols();
  const auto zd = z.data();
  std::vector<Scalar> out(z.numel());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      out[i] = static_cast<Scalar>(lo.alpha * oracle.mean[c] +
                                   ratio * (zd[i] - hi.alpha * oracle.mean[c]));
    }
  }
  return Tensor(z.shape(), std::move(out));
}

Tensor oracle_flow(const Tensor& z, std::size_t n_hi, std::size_t n_lo, const GaussianOracle& oracle,
                   const NoiseSchedule& schedule) {
  return oracle_flow(z, schedule.at(n_hi), schedule.at(n_lo), oracle);
}

}  // namespace lcm
