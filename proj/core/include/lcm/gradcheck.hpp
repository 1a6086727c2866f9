#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "lcm/tensor.hpp"

namespace lcm {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;  // index into the params list
  std::size_t worst_index = 0;  // flat element index inside that param
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;  // number of scalars probed
};

/// Compares the tape gradient of `loss_fn` against central differences.
///
/// `loss_fn` must rebuild the scalar loss from the current parameter values
/// each call. Each element of every tensor in `params` is perturbed in place by
/// ±h and restored. The relative error per element is
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// Requires 64-bit scalars and h in [1e-6, 1e-4]. Throws NumericError
/// (naming the parameter and element) if a probe produces a non-finite loss.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                           double h = 1e-5);

}  // namespace lcm
