#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "symran/concept/conceptizer.hpp"
#include "symran/core/errors.hpp"
#include "symran/core/tensor.hpp"

namespace symran {

/// f(x, grad) returns the scalar at x and adds df/dx into grad.
using ScalarWithGrad = std::function<double(std::span<const double>, std::span<double>)>;

/// Midpoint Riemann-sum integrated gradients along base -> x.
inline Vector integrated_gradients(const ScalarWithGrad& f, std::span<const double> x,
                                   std::span<const double> base, std::size_t steps) {
  require_dim(x.size() == base.size(), "integrated_gradients: x and baseline differ in size");
  require(steps >= 1, "integrated_gradients: need at least one step");
  const std::size_t n = x.size();
  Vector sum(n, 0.0), point(n);
  for (std::size_t j = 0; j < steps; ++j) {
    const double alpha = (static_cast<double>(j) + 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < n; ++i) point[i] = base[i] + alpha * (x[i] - base[i]);
    f(point, sum);
  }
  Vector out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - base[i]) * sum[i] / static_cast<double>(steps);
  return out;
}

struct IgConfig {
  std::optional<KpmState> baseline;  // defaults to the model's training-mean state
  std::size_t steps = 256;

  void validate() const {
    if (steps < 16) throw ConfigError("IG: N_ig must be at least 16");
  }
};

/// Attribution of concept k to every (entity, metric) entry of s; shape of s.values.
inline Matrix ig_attribution(const Conceptizer& model, std::size_t k, const KpmState& s,
                             const IgConfig& cfg = {}) {
  cfg.validate();
  require(k < model.size(), "ig_attribution: concept index out of range");
  const KpmState base = cfg.baseline ? *cfg.baseline : model.baseline_state(s);
  model.check_schema(s);
  model.check_schema(base);
  if (base.values.rows() != s.values.rows() || base.roster != s.roster)
    throw DimensionError("ig_attribution: baseline is not schema-conformant with the state");

  const std::size_t rows = s.values.rows(), cols = s.values.cols();
  Matrix point(rows, cols), grad(rows, cols);
  ScalarWithGrad f = [&](std::span<const double> x, std::span<double> g) {
    std::copy(x.begin(), x.end(), point.data().begin());
    std::fill(grad.data().begin(), grad.data().end(), 0.0);
    const double c = model.concept_and_state_grad(k, s, point, grad);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad.data()[i];
    return c;
  };
  const Vector attr = integrated_gradients(f, s.values.data(), base.values.data(), cfg.steps);
  Matrix out(rows, cols);
  std::copy(attr.begin(), attr.end(), out.data().begin());
  return out;
}

struct AuditRow {
  std::size_t concept_index = 0;
  std::string concept_name;
  int metric_id = 0;  // global metric id
  double max_abs = 0.0;
  double mean = 0.0;  // mean signed attribution summed over in-scope rows
};

struct AuditReport {
  std::vector<AuditRow> rows;
  double off_support_max = 0.0;
  double max_completeness_error = 0.0;
  std::size_t probes = 0;

  bool passed() const noexcept { return off_support_max == 0.0; }
};

/// IG over every probe and concept: checks that attribution outside (G_k, M_k)
/// is exactly zero and summarizes on-support attributions per (k, m).
inline AuditReport audit_support_mask(const Conceptizer& model, std::span<const KpmState> probes,
                                      const IgConfig& cfg = {}) {
  require(!probes.empty(), "audit_support_mask: need at least one probe state");
  const ConceptTemplate& tmpl = model.concept_template();
  AuditReport rep;
  rep.probes = probes.size();
  for (std::size_t k = 0; k < tmpl.size(); ++k)
    for (int m : tmpl[k].metrics)
      rep.rows.push_back({k, tmpl[k].name, m + kpm::first_id(tmpl.task()), 0.0, 0.0});

  for (const KpmState& s : probes) {
    IgConfig local = cfg;
    if (!local.baseline) local.baseline = model.baseline_state(s);
    const Vector c_s = model.conceptize(s), c_base = model.conceptize(*local.baseline);
    std::size_t row_off = 0;
    for (std::size_t k = 0; k < tmpl.size(); ++k) {
      const ConceptSpec& spec = tmpl[k];
      const Matrix attr = ig_attribution(model, k, s, local);
      const auto in_scope = spec.selector.rows(s);
      double total = 0.0;
      for (std::size_t g = 0; g < attr.rows(); ++g) {
        const bool row_in = std::find(in_scope.begin(), in_scope.end(), g) != in_scope.end();
        for (std::size_t m = 0; m < attr.cols(); ++m) {
          const double a = attr(g, m);
          total += a;
          const auto it = std::find(spec.metrics.begin(), spec.metrics.end(), static_cast<int>(m));
          if (!row_in || it == spec.metrics.end()) {
            rep.off_support_max = std::max(rep.off_support_max, std::abs(a));
            continue;
          }
          AuditRow& r = rep.rows[row_off + static_cast<std::size_t>(it - spec.metrics.begin())];
          r.max_abs = std::max(r.max_abs, std::abs(a));
          r.mean += a / static_cast<double>(probes.size());
        }
      }
      const double delta = c_s[k] - c_base[k];
      rep.max_completeness_error =
          std::max(rep.max_completeness_error, std::abs(total - delta) / std::max(1.0, std::abs(delta)));
      row_off += spec.metrics.size();
    }
  }
  return rep;
}

}  // namespace symran
