#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/core/tensor.hpp"
#include "symran/env/kpm.hpp"

namespace symran {

/// nu > 0 iff (a, s) violates the rule; project maps back into its feasible set.
struct CorrectionRule {
  std::string id;
  int priority = 0;  // lower runs first
  std::function<double(const Action&, const KpmState&)> violation;
  std::function<Action(const Action&, const KpmState&)> project;
};

struct SliceBounds {
  double a_min = 0.0;
  double a_max = 1.0;

  void validate(std::size_t n = 3) const {
    const double k = static_cast<double>(n);
    if (!(a_min >= 0.0 && a_max <= 1.0 && a_min <= a_max))
      throw ConfigError("shield: need 0 <= a_min <= a_max <= 1");
    if (k * a_min > 1.0 + 1e-12 || k * a_max < 1.0 - 1e-12)
      throw ConfigError("shield: infeasible slice bounds (n * a_min > 1 or n * a_max < 1)");
  }
};

inline constexpr double budget_tolerance = 1e-12;

inline double capped_simplex_violation(const Action& a, const SliceBounds& b) {
  double worst = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (double x : a) {
    if (!std::isfinite(x)) return std::numeric_limits<double>::infinity();
    worst = std::max({worst, b.a_min - x, x - b.a_max});
    sum += x;
  }
  return std::max(worst, std::abs(sum - 1.0) - budget_tolerance);
}

/// Clamp to [a_min, a_max], then rescale the unclamped entries to fill the
/// remaining budget, until no free entry leaves the bounds.
inline Action project_capped_simplex(const Action& in, const SliceBounds& b) {
  b.validate(in.size());
  const std::size_t n = in.size();
  require_dim(n > 0, "project_capped_simplex: empty action");
  Action x(in);
  for (double& v : x)
    if (!std::isfinite(v)) v = 0.0;
  std::vector<char> fixed(n, 0);
  for (std::size_t iter = 0; iter <= n + 1; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      if (fixed[i]) continue;
      if (x[i] < b.a_min) {
        x[i] = b.a_min;
        fixed[i] = 1;
      } else if (x[i] > b.a_max) {
        x[i] = b.a_max;
        fixed[i] = 1;
      }
    }
    double rest = 1.0, free_sum = 0.0;
    std::size_t n_free = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (fixed[i]) rest -= x[i];
      else {
        free_sum += x[i];
        ++n_free;
      }
    }
    if (n_free == 0) break;
    bool inside = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (fixed[i]) continue;
      x[i] = free_sum > 0.0 ? x[i] * rest / free_sum : rest / static_cast<double>(n_free);
      inside = inside && x[i] >= b.a_min && x[i] <= b.a_max;
    }
    if (inside) break;
  }
  double sum = 0.0;
  for (double v : x) sum += v;
  if (std::abs(sum - 1.0) <= budget_tolerance) return x;

  // Every entry ended on a bound with the wrong total: exact projection
  // x_i = clamp(x_i - tau) with tau found by bisection.
  const Action base = x;
  auto total = [&](double tau) {
    double s = 0.0;
    for (double v : base) s += std::clamp(v - tau, b.a_min, b.a_max);
    return s;
  };
  double lo = -2.0, hi = 2.0;
  for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (total(mid) > 1.0) lo = mid;
    else hi = mid;
  }
  for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(base[i] - hi, b.a_min, b.a_max);
  // Put the residual on one interior entry.
  sum = 0.0;
  for (double v : x) sum += v;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i] + (1.0 - sum);
    if (v >= b.a_min && v <= b.a_max) {
      x[i] = v;
      break;
    }
  }
  return x;
}

inline CorrectionRule capped_simplex_rule(SliceBounds b) {
  b.validate();
  return {"prb-budget-and-slice-bounds", 0,
          [b](const Action& a, const KpmState&) { return capped_simplex_violation(a, b); },
          [b](const Action& a, const KpmState&) { return project_capped_simplex(a, b); }};
}

/// Blocks a switch until `dwell` steps have passed since the previous one.
inline CorrectionRule min_dwell_rule(int dwell) {
  if (dwell < 1) throw ConfigError("shield: dwell must be >= 1");
  auto violated = [dwell](const Action& a, const KpmState& s) {
    const bool sw = !a.empty() && a[0] >= 0.5;
    const std::int64_t since = s.since_switch == never_switched ? never_switched : s.since_switch + 1;
    return sw && since < dwell ? 1.0 : 0.0;
  };
  return {"min-dwell", 0, violated, [violated](const Action& a, const KpmState& s) {
            return violated(a, s) > 0.0 ? Action{0.0} : a;
          }};
}

/// Default rule set per task.
inline std::vector<CorrectionRule> default_correction_rules(Task task, SliceBounds bounds, int dwell) {
  if (task == Task::slicing) return {capped_simplex_rule(bounds)};
  return {min_dwell_rule(dwell)};
}

inline void sort_rules(std::vector<CorrectionRule>& rules) {
  std::stable_sort(rules.begin(), rules.end(),
                   [](const CorrectionRule& x, const CorrectionRule& y) { return x.priority < y.priority; });
}

/// Applies every violated rule in order; rules must already be sorted by priority.
inline Action apply_correction_rules(std::span<const CorrectionRule> rules, const Action& a, const KpmState& s) {
  Action out = a;
  for (const CorrectionRule& r : rules)
    if (r.violation(out, s) > 0.0) out = r.project(out, s);
  return out;
}

}  // namespace symran
