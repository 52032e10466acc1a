#pragma once

#include <functional>

#include "aod/tensor.hpp"

namespace aod {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coord = 0;
};

// Central-difference comparison of an analytic gradient against the scalar
// function it claims to differentiate. f must be deterministic: dropout in
// eval mode, actions and noise pinned.
inline GradCheckReport grad_check(const std::function<double(const Tensor&)>& f,
                                  const std::function<Tensor(const Tensor&)>& analytic_grad,
                                  const Tensor& x, double eps) {
  const Tensor g = analytic_grad(x);
  if (g.shape != x.shape) throw ShapeError("grad_check: analytic gradient shape mismatch");
  GradCheckReport report;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double x0 = probe[i];
    probe[i] = x0 + eps;
    const double fp = f(probe);
    probe[i] = x0 - eps;
    const double fm = f(probe);
    probe[i] = x0;
    if (!is_finite(fp) || !is_finite(fm)) {
      throw NumericalError("grad_check: non-finite function value");
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double rel = std::abs(g[i] - numeric) /
                       std::max(1.0, std::abs(g[i]) + std::abs(numeric));
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coord = i;
    }
  }
  return report;
}

}  // namespace aod
