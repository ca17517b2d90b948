#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "symran/core/errors.hpp"
#include "symran/core/tensor.hpp"

namespace symran {

inline Vector log_softmax(std::span<const double> logits, double kappa = 1.0) {
  if (!(kappa > 0.0)) throw InvalidArgument("softmax: temperature must be positive");
  require_dim(!logits.empty(), "softmax: empty logits");
  Vector out(logits.size());
  double mx = logits[0] / kappa;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] / kappa;
    mx = std::max(mx, out[i]);
  }
  double s = 0.0;
  for (double& x : out) {
    x -= mx;
    s += std::exp(x);
  }
  const double ls = std::log(s);
  for (double& x : out) x -= ls;
  return out;
}

inline Vector softmax(std::span<const double> logits, double kappa = 1.0) {
  Vector out = log_softmax(logits, kappa);
  for (double& x : out) x = std::exp(x);
  return out;
}

/// KL(softmax(p/kappa) || softmax(q/kappa)); optional gradient w.r.t. q logits.
inline double softmax_kl(std::span<const double> p_logits, std::span<const double> q_logits,
                         double kappa, std::span<double> grad_q = {}) {
  if (!(kappa > 0.0)) throw InvalidArgument("softmax_kl: temperature must be positive");
  require_dim(p_logits.size() == q_logits.size(), "softmax_kl: dimension mismatch");
  const Vector lp = log_softmax(p_logits, kappa);
  const Vector lq = log_softmax(q_logits, kappa);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double p = std::exp(lp[i]);
    if (p > 0.0) kl += p * (lp[i] - lq[i]);
  }
  if (!grad_q.empty()) {
    require_dim(grad_q.size() == q_logits.size(), "softmax_kl: gradient dimension mismatch");
    for (std::size_t i = 0; i < lp.size(); ++i)
      grad_q[i] = (std::exp(lq[i]) - std::exp(lp[i])) / kappa;
  }
  return std::max(kl, 0.0);
}

inline std::size_t argmax(std::span<const double> xs) {
  require_dim(!xs.empty(), "argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[best]) best = i;
  return best;
}

}  // namespace symran
