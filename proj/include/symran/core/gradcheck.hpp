#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/core/tensor.hpp"

namespace symran {

/// f(p, grad) returns the scalar value at p and, when grad is non-null, writes
/// the analytic gradient into it.
using ValueAndGrad = std::function<double(std::span<const double>, Vector*)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the analytic gradient to central differences, parameter by parameter.
inline GradCheckResult finite_diff_check_detail(const ValueAndGrad& f, std::span<const double> params,
                                                double eps = 1e-5) {
  Vector p(params.begin(), params.end());
  Vector analytic(p.size(), 0.0);
  const double f0 = f(p, &analytic);
  if (!std::isfinite(f0)) throw NumericError("finite_diff_check: non-finite f at params");
  require_dim(analytic.size() == p.size(), "finite_diff_check: gradient size mismatch");
  GradCheckResult res;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + eps;
    const double fp = f(p, nullptr);
    p[i] = orig - eps;
    const double fm = f(p, nullptr);
    p[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_check: non-finite f at a perturbation");
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-12);
    if (i == 0 || err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = i;
      res.analytic = analytic[i];
      res.numeric = numeric;
    }
  }
  return res;
}

inline double finite_diff_check(const ValueAndGrad& f, std::span<const double> params,
                                double eps = 1e-5) {
  return finite_diff_check_detail(f, params, eps).max_rel_error;
}

}  // namespace symran
