#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/core/net.hpp"
#include "symran/core/tensor.hpp"

namespace symran {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer state for a flat parameter vector.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(std::size_t n, AdamConfig cfg = {}) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) noexcept { cfg_.lr = lr; }
  std::size_t steps() const noexcept { return steps_; }
  std::size_t size() const noexcept { return m_.size(); }
  const Vector& first_moment() const noexcept { return m_; }
  const Vector& second_moment() const noexcept { return v_; }

  /// Applies one update. A non-finite gradient rejects the step and throws.
  void step(std::span<double> params, std::span<const double> grad) {
    require_dim(params.size() == m_.size() && grad.size() == m_.size(),
                "AdamState::step: size mismatch");
    if (!all_finite(grad)) throw NumericError("non-finite gradient; optimizer step rejected");
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mh = m_[i] / bc1;
      const double vh = v_[i] / bc2;
      params[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }

 private:
  AdamConfig cfg_;
  Vector m_, v_;
  std::size_t steps_ = 0;
};

/// One optimizer step of a single net on a batch. loss(i, output, adjoint)
/// returns the per-example loss and writes dloss/doutput; the batch loss is the
/// mean over examples. Returns the batch loss.
template <class LossFn>
double train_step(FeedForwardNet& net, AdamState& opt, std::span<const Vector> inputs, LossFn&& loss) {
  require(!inputs.empty(), "train_step: empty batch");
  Vector grad(net.parameter_count(), 0.0);
  ForwardCache cache;
  Vector adjoint(net.output_dim());
  const double scale = 1.0 / static_cast<double>(inputs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Vector& y = net.forward(inputs[i], cache);
    std::fill(adjoint.begin(), adjoint.end(), 0.0);
    total += loss(i, std::span<const double>(y), std::span<double>(adjoint));
    for (double& a : adjoint) a *= scale;
    net.backward(cache, adjoint, grad);
  }
  total *= scale;
  if (!std::isfinite(total)) throw NumericError("non-finite training loss");
  Vector p = net.parameters();
  opt.step(p, grad);
  net.set_parameters(p);
  return total;
}

}  // namespace symran
