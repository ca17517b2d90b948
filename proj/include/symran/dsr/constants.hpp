#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/core/tensor.hpp"
#include "symran/dsr/expression.hpp"

namespace symran {

/// Concept rows X (N x K) and targets y for one action dimension.
struct Dataset {
  Matrix X;
  Vector y;

  std::size_t size() const noexcept { return y.size(); }
  void validate() const {
    if (y.empty()) throw InvalidArgument("dataset is empty");
    require_dim(X.rows() == y.size(), "dataset: X rows and y differ in length");
  }
};

inline double mse_of(const Vector& pred, const Vector& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = pred[i] - y[i];
    s += d * d;
  }
  const double m = s / static_cast<double>(y.size());
  return std::isfinite(m) ? m : std::numeric_limits<double>::infinity();
}

inline double expression_mse(const ExpressionTree& tree, const Dataset& d) {
  d.validate();
  Vector pred;
  tree.eval_batch(d.X, pred);
  return mse_of(pred, d.y);
}

/// J = 1 / (1 + MSE), in (0, 1]; a non-finite fit scores 0.
inline double fidelity_reward_from_mse(double mse) {
  if (!std::isfinite(mse)) return 0.0;
  return 1.0 / (1.0 + mse);
}

inline double fidelity_reward(const ExpressionTree& tree, const Dataset& d) {
  return fidelity_reward_from_mse(expression_mse(tree, d));
}

/// MSE as a function of the tree's constants, with its gradient.
inline double constant_mse(const ExpressionTree& tree, std::span<const double> constants, const Dataset& d,
                           Vector* grad) {
  d.validate();
  ExpressionTree t = tree;
  t.set_constants(constants);
  Vector pred;
  Matrix jac;
  t.eval_batch_with_jacobian(d.X, pred, jac);
  const double n = static_cast<double>(d.size());
  if (grad) grad->assign(constants.size(), 0.0);
  double s = 0.0;
  for (std::size_t p = 0; p < d.size(); ++p) {
    const double r = pred[p] - d.y[p];
    s += r * r;
    if (grad)
      for (std::size_t j = 0; j < constants.size(); ++j) (*grad)[j] += 2.0 * r * jac(p, j) / n;
  }
  return s / n;
}

struct ConstantFit {
  ExpressionTree tree;
  double mse = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
};

namespace detail {

// Solves A x = b for a small symmetric positive definite A (Cholesky).
// Returns false when A is not numerically positive definite.
inline bool solve_spd(std::vector<double> A, std::vector<double> b, std::size_t n, std::vector<double>& x) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = A[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= A[j * n + k] * A[j * n + k];
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    d = std::sqrt(d);
    A[j * n + j] = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = A[i * n + j];
      for (std::size_t k = 0; k < j; ++k) v -= A[i * n + k] * A[j * n + k];
      A[i * n + j] = v / d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double v = b[i];
    for (std::size_t k = 0; k < i; ++k) v -= A[i * n + k] * b[k];
    b[i] = v / A[i * n + i];
  }
  x.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double v = b[i];
    for (std::size_t k = i + 1; k < n; ++k) v -= A[k * n + i] * x[k];
    x[i] = v / A[i * n + i];
  }
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace detail

/// Least-squares fit of the tree's constants by damped Gauss-Newton
/// (Levenberg-Marquardt). Keeps the best constants seen, so the returned MSE
/// never exceeds the MSE of the input constants.
inline ConstantFit fit_constants(const ExpressionTree& tree, const Dataset& d, std::size_t max_steps = 50) {
  d.validate();
  ConstantFit best{tree, expression_mse(tree, d), 0};
  const std::size_t nc = tree.num_constants();
  if (nc == 0 || max_steps == 0) return best;

  ExpressionTree cur = tree;
  Vector pred;
  Matrix jac;
  double lambda = 1e-3;
  double cur_mse = best.mse;
  std::vector<double> JtJ(nc * nc), Jtr(nc), A(nc * nc), step;
  for (std::size_t it = 0; it < max_steps; ++it) {
    best.iterations = it + 1;
    cur.eval_batch_with_jacobian(d.X, pred, jac);
    std::fill(JtJ.begin(), JtJ.end(), 0.0);
    std::fill(Jtr.begin(), Jtr.end(), 0.0);
    bool finite = true;
    for (std::size_t p = 0; p < d.size(); ++p) {
      const double r = pred[p] - d.y[p];
      if (!std::isfinite(r)) {
        finite = false;
        break;
      }
      for (std::size_t a = 0; a < nc; ++a) {
        const double ja = jac(p, a);
        Jtr[a] += ja * r;
        for (std::size_t b = 0; b <= a; ++b) JtJ[a * nc + b] += ja * jac(p, b);
      }
    }
    if (!finite) break;
    for (std::size_t a = 0; a < nc; ++a)
      for (std::size_t b = 0; b < a; ++b) JtJ[b * nc + a] = JtJ[a * nc + b];

    bool improved = false;
    while (lambda < 1e12) {
      A = JtJ;
      for (std::size_t a = 0; a < nc; ++a) A[a * nc + a] += lambda * (JtJ[a * nc + a] + 1e-12);
      std::vector<double> rhs(nc);
      for (std::size_t a = 0; a < nc; ++a) rhs[a] = -Jtr[a];
      if (!detail::solve_spd(A, rhs, nc, step)) {
        lambda *= 10.0;
        continue;
      }
      Vector trial = cur.constants();
      for (std::size_t a = 0; a < nc; ++a) trial[a] += step[a];
      bool ok = true;
      for (double v : trial) ok = ok && std::isfinite(v) && std::abs(v) < 1e12;
      if (!ok) {
        lambda *= 10.0;
        continue;
      }
      ExpressionTree cand = cur;
      cand.set_constants(trial);
      const double m = expression_mse(cand, d);
      if (m < cur_mse) {
        const double gain = cur_mse - m;
        cur = std::move(cand);
        cur_mse = m;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
        if (gain <= 1e-12 * (1.0 + m)) it = max_steps;  // converged
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  if (cur_mse < best.mse) {
    best.tree = cur;
    best.mse = cur_mse;
  }
  return best;
}

}  // namespace symran
