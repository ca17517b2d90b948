#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symran/core/errors.hpp"
#include "symran/env/env.hpp"
#include "symran/shield/shield.hpp"

namespace symran {

/// What a policy emits for one state: the proposed action and the concept
/// vector the shield should index on (empty when the policy has none).
struct PolicyDecision {
  Action a;
  Vector c;
};

using Policy = std::function<PolicyDecision(const KpmState& s, std::span<const double> c_true)>;
/// Builds a fresh policy instance for one rollout seed (stateful policies such
/// as noisy scripted teachers must not leak state across rollouts).
using PolicyFactory = std::function<Policy(std::uint64_t seed)>;

inline PolicyFactory stateless(Policy p) {
  return [p = std::move(p)](std::uint64_t) { return p; };
}

struct EpisodeSummary {
  std::uint64_t seed = 0;
  std::vector<double> rewards;
  std::vector<double> v_thp;
  std::vector<double> v_dly;
  std::vector<int> actions;  // handover action codes / slicing argmax, per step
  std::vector<int> shadow_actions;  // unshielded actions of a shadow policy on the same states
  std::size_t shield_triggers = 0;
  std::size_t shield_warnings = 0;
  bool empty = true;
  double mean_reward = 0.0;
  double mean_v_thp = 0.0;
  double mean_v_dly = 0.0;

  std::size_t steps() const noexcept { return rewards.size(); }
  bool operator==(const EpisodeSummary&) const = default;
};

inline int action_code(const Action& a) {
  if (a.size() == 1) return a[0] >= 0.5 ? 1 : 0;
  return static_cast<int>(std::max_element(a.begin(), a.end()) - a.begin());
}

/// Seeded rollout of `steps` decisions. The env seed is cfg.seed. A shadow
/// policy, if given, is queried on every visited state without acting.
inline EpisodeSummary run_episode(const EnvConfig& cfg, Policy& policy, const Shield* shield, std::size_t steps,
                                  std::vector<nlohmann::json>* shield_log = nullptr, Policy* shadow = nullptr) {
  Environment env(cfg);
  EpisodeSummary out;
  out.seed = cfg.seed;
  out.rewards.reserve(steps);
  out.v_thp.reserve(steps);
  out.v_dly.reserve(steps);
  out.actions.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const KpmState& s = env.state();
    const Vector c_true = env.true_concepts();
    PolicyDecision d = policy(s, c_true);
    if (shadow) out.shadow_actions.push_back(action_code((*shadow)(s, c_true).a));
    if (d.a.size() != action_dim(cfg.task))
      throw InvalidArgument("run_episode: policy action has the wrong dimension for task " +
                            std::string(to_string(cfg.task)));
    Action a = std::move(d.a);
    if (shield) {
      ShieldDecision sd = shield->decide(a, d.c, s);
      out.shield_triggers += sd.triggered ? 1 : 0;
      out.shield_warnings += sd.warning.empty() ? 0 : 1;
      if (shield_log) shield_log->push_back(decision_to_json(sd));
      a = std::move(sd.action);
    }
    out.actions.push_back(action_code(a));
    const StepOutcome o = env.step(a);
    out.rewards.push_back(o.reward);
    out.v_thp.push_back(o.v_thp);
    out.v_dly.push_back(o.v_dly);
  }
  out.empty = out.rewards.empty();
  out.mean_reward = mean(out.rewards);
  out.mean_v_thp = mean(out.v_thp);
  out.mean_v_dly = mean(out.v_dly);
  return out;
}

/// Empirical CDF over distinct values: F[i] = P(X <= x[i]).
struct Cdf {
  std::vector<double> x;
  std::vector<double> F;

  static Cdf of(std::vector<double> values) {
    Cdf c;
    if (values.empty()) return c;
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
      c.x.push_back(values[i]);
      c.F.push_back(static_cast<double>(i + 1) / n);
    }
    return c;
  }

  double operator()(double v) const {
    const auto it = std::upper_bound(x.begin(), x.end(), v);
    return it == x.begin() ? 0.0 : F[static_cast<std::size_t>(it - x.begin()) - 1];
  }

  /// Value at probability p (smallest x with F >= p).
  double quantile(double p) const {
    require(!x.empty(), "Cdf::quantile: empty CDF");
    const auto it = std::lower_bound(F.begin(), F.end(), p - 1e-12);
    return x[std::min<std::size_t>(static_cast<std::size_t>(it - F.begin()), x.size() - 1)];
  }

  bool operator==(const Cdf&) const = default;
};

inline std::vector<double> pooled(const std::vector<EpisodeSummary>& eps, std::vector<double> EpisodeSummary::*field) {
  std::vector<double> out;
  for (const auto& e : eps) out.insert(out.end(), (e.*field).begin(), (e.*field).end());
  return out;
}

struct ComparisonReport {
  std::vector<std::uint64_t> seeds;
  std::vector<EpisodeSummary> teacher;
  std::vector<EpisodeSummary> student;
  double teacher_mean = 0.0;
  double student_mean = 0.0;
  double recovery = 0.0;
  double teacher_v_thp = 0.0, student_v_thp = 0.0;
  double teacher_v_dly = 0.0, student_v_dly = 0.0;
  double agreement = 0.0;  // student action code == teacher's, on the teacher's states
  Cdf teacher_reward_cdf, student_reward_cdf;
  Cdf teacher_v_thp_cdf, student_v_thp_cdf;
  Cdf teacher_v_dly_cdf, student_v_dly_cdf;
  std::optional<int> teacher_omega, student_omega;
  std::optional<double> latency_ratio;  // teacher time / student time
};

/// Paired rollouts on identical env seeds; aggregates pool the per-step values
/// in seed order.
inline ComparisonReport compare_policies(const EnvConfig& base, const PolicyFactory& teacher,
                                         const PolicyFactory& student, const Shield* shield,
                                         std::span<const std::uint64_t> seeds, std::size_t steps,
                                         std::vector<nlohmann::json>* shield_log = nullptr) {
  if (seeds.size() < 3) throw InvalidArgument("compare_policies: need at least 3 seeds");
  ComparisonReport r;
  r.seeds.assign(seeds.begin(), seeds.end());
  std::sort(r.seeds.begin(), r.seeds.end());
  std::size_t agree = 0, total = 0;
  for (std::uint64_t seed : r.seeds) {
    EnvConfig cfg = base;
    cfg.seed = seed;
    Policy t = teacher(seed);
    Policy shadow = student(seed);
    Policy s = student(seed);
    r.teacher.push_back(run_episode(cfg, t, nullptr, steps, nullptr, &shadow));
    r.student.push_back(run_episode(cfg, s, shield, steps, shield_log));
    const auto& ta = r.teacher.back().actions;
    const auto& sa = r.teacher.back().shadow_actions;
    for (std::size_t i = 0; i < ta.size(); ++i) agree += ta[i] == sa[i] ? 1 : 0;
    total += ta.size();
  }
  const auto tr = pooled(r.teacher, &EpisodeSummary::rewards), sr = pooled(r.student, &EpisodeSummary::rewards);
  const auto tt = pooled(r.teacher, &EpisodeSummary::v_thp), st = pooled(r.student, &EpisodeSummary::v_thp);
  const auto td = pooled(r.teacher, &EpisodeSummary::v_dly), sd = pooled(r.student, &EpisodeSummary::v_dly);
  r.teacher_mean = mean(tr);
  r.student_mean = mean(sr);
  r.recovery = r.teacher_mean != 0.0 ? r.student_mean / r.teacher_mean : (r.student_mean == 0.0 ? 1.0 : 0.0);
  r.teacher_v_thp = mean(tt);
  r.student_v_thp = mean(st);
  r.teacher_v_dly = mean(td);
  r.student_v_dly = mean(sd);
  r.agreement = total ? static_cast<double>(agree) / static_cast<double>(total) : 1.0;
  r.teacher_reward_cdf = Cdf::of(tr);
  r.student_reward_cdf = Cdf::of(sr);
  r.teacher_v_thp_cdf = Cdf::of(tt);
  r.student_v_thp_cdf = Cdf::of(st);
  r.teacher_v_dly_cdf = Cdf::of(td);
  r.student_v_dly_cdf = Cdf::of(sd);
  return r;
}

}  // namespace symran
