#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "pfv2/tensor.hpp"

namespace pfv2 {

/// Adam moments plus hyperparameters. `m`/`v` are allocated lazily on the
/// first step to match the parameter list handed to `adamw_step`.
struct OptimizerState {
  double lr = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam step with decoupled weight decay (p <- p - lr*wd*p is
/// applied to the parameter directly, never folded into the moments).
void adamw_step(std::vector<Tensor>& params, OptimizerState& state);

struct GradCheckResult {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  /// Set when a non-finite analytic or numeric value was encountered.
  bool non_finite = false;
};

/// Compares the analytic gradient of scalar `f` at `x` against central
/// differences. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
/// `x` is perturbed in place and restored.
GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor& x, double h = 1e-5,
                           double tol = 1e-4);

/// Convenience overload for f taking its input explicitly.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5,
                           double tol = 1e-4);

}  // namespace pfv2
