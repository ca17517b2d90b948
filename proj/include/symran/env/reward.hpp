#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <utility>

#include "symran/core/errors.hpp"

namespace symran {

struct RewardConfig {
  // Per slice (eMBB, URLLC, mMTC).
  std::array<double, 3> thp_target{2.0, 0.5, 0.1};   // Mbit/s
  std::array<double, 3> dly_target{100.0, 10.0, 300.0};  // ms
  double ho_thp_target = 8.0;
  double ho_dly_target = 40.0;
  double beta1 = 1.0, beta2 = 1.0, beta3 = 1.0, beta4 = 1.0;
  double gamma = 0.99;
  int horizon = 200;

  void validate() const {
    for (double x : thp_target)
      if (!(x > 0.0)) throw ConfigError("reward: throughput targets must be > 0");
    for (double x : dly_target)
      if (!(x > 0.0)) throw ConfigError("reward: delay targets must be > 0");
    if (!(ho_thp_target > 0.0) || !(ho_dly_target > 0.0))
      throw ConfigError("reward: handover targets must be > 0");
    if (beta1 < 0 || beta2 < 0 || beta3 < 0 || beta4 < 0)
      throw ConfigError("reward: penalty weights must be >= 0");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("reward: gamma must be in [0,1)");
    if (horizon < 1) throw ConfigError("reward: horizon must be >= 1");
  }
};

/// Achieved and target QoS of one entity.
struct QosSample {
  double mu = 0.0;
  double mu_target = 1.0;
  double omega = 0.0;
  double omega_target = 1.0;

  bool thp_violated() const noexcept { return mu < mu_target; }
  bool dly_violated() const noexcept { return omega > omega_target; }
  bool operator==(const QosSample&) const = default;
};

inline double throughput_penalty(double mu, double target) {
  if (!(target > 0.0)) throw InvalidArgument("throughput target must be > 0");
  return std::max((target - mu) / target, 0.0);
}

inline double delay_penalty(double omega, double target) {
  if (!(target > 0.0)) throw InvalidArgument("delay target must be > 0");
  return std::max((omega - target) / target, 0.0);
}

/// Slicing reward: sum over UEs of 1/(1 + total PRB) minus weighted penalties.
inline double slicing_reward(std::span<const double> prb, std::span<const QosSample> qos,
                             const RewardConfig& cfg) {
  require_dim(prb.size() == qos.size(), "slicing_reward: PRB and QoS sizes differ");
  double total_prb = 0.0;
  for (double n : prb) total_prb += n;
  const double eff = 1.0 / (1.0 + total_prb);
  double r = 0.0;
  for (const QosSample& q : qos) {
    r += eff - (cfg.beta1 * throughput_penalty(q.mu, q.mu_target) +
                cfg.beta2 * delay_penalty(q.omega, q.omega_target));
  }
  return r;
}

inline double handover_reward(const QosSample& q, const RewardConfig& cfg) {
  return -(cfg.beta3 * throughput_penalty(q.mu, q.mu_target) +
           cfg.beta4 * delay_penalty(q.omega, q.omega_target));
}

/// Fractions of entities violating the throughput and delay targets.
inline std::pair<double, double> violation_rates(std::span<const QosSample> qos) {
  if (qos.empty()) throw InvalidArgument("violation_rates: empty entity set");
  double thp = 0.0, dly = 0.0;
  for (const QosSample& q : qos) {
    thp += q.thp_violated() ? 1.0 : 0.0;
    dly += q.dly_violated() ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(qos.size());
  return {thp / n, dly / n};
}

}  // namespace symran
