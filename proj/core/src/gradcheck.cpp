#include "lcm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "lcm/errors.hpp"

namespace lcm {

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           double h) {
  if constexpr (!std::is_same_v<Scalar, double>) {
    throw InvalidArgument("grad_check requires a 64-bit scalar build");
  }
  if (!(h >= 1e-6 && h <= 1e-4)) throw InvalidArgument("grad_check: step h must lie in [1e-6, 1e-4]");

  std::vector<bool> saved_flags;
  for (auto& p : params) {
    saved_flags.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.zero_grad();  // params the loss never touches must read as zero, not stale
  }

  std::vector<std::vector<Scalar>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  for (const auto& p : params) analytic.push_back(p.grad());

  auto eval = [&](std::size_t pi, std::size_t i) {
    NoGradScope no_grad;
    const double v = loss_fn().item();
    if (!std::isfinite(v)) {
      throw NumericError("grad_check: non-finite loss while probing param " + std::to_string(pi) +
                         " element " + std::to_string(i));
    }
    return v;
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].data_mut();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Scalar original = values[i];
      values[i] = original + h;
      const double up = eval(pi, i);
      values[i] = original - h;
      const double down = eval(pi, i);
      values[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi].set_requires_grad(saved_flags[pi]);
  return report;
}

}  // namespace lcm
