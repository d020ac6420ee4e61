#include "pfv2/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pfv2 {

void adamw_step(std::vector<Tensor>& params, OptimizerState& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw std::invalid_argument("adamw_step: parameter " + std::to_string(i) + " " +
                                  shape_str(params[i].shape()) + " has no gradient");
    }
  }
  if (state.m.size() != params.size()) {
    if (state.step != 0) throw std::invalid_argument("adamw_step: parameter list changed between steps");
    state.m.clear();
    state.v.clear();
    for (const Tensor& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::span<double> p = params[i].mutable_data();
    std::span<const double> g = params[i].grad();
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    if (m.size() != p.size()) throw std::invalid_argument("adamw_step: moment shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= state.lr * state.weight_decay * p[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

GradCheckResult grad_check(const std::function<Tensor()>& f, Tensor& x, double h, double tol) {
  GradCheckResult result;
  const bool had_rg = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor out = f();
  backward(out);
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  x.clear_grad();

  std::span<double> xs = x.mutable_data();
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double orig = xs[i];
      xs[i] = orig + h;
      const double fp = f().item();
      xs[i] = orig - h;
      const double fm = f().item();
      xs[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
        result.non_finite = true;
        result.worst_index = i;
        result.max_rel_error = std::numeric_limits<double>::infinity();
        break;
      }
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_index = i;
      }
    }
  }
  x.set_requires_grad(had_rg);
  result.passed = !result.non_finite && result.max_rel_error <= tol;
  return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h,
                           double tol) {
  Tensor input = x.detach();
  return grad_check([&] { return f(input); }, input, h, tol);
}

}  // namespace pfv2
