#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <tuple>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/core/rng.hpp"
#include "symran/env/kpm.hpp"
#include "symran/env/reward.hpp"

namespace symran {

struct SlicingParams {
  int ue_min = 9;
  int ue_max = 14;
  int n_prb = 100;
  double step_s = 0.1;
  double churn_prob = 0.05;
  // Per-slice per-UE demand (Mbit/s) in the low / medium / high traffic state.
  std::array<std::array<double, 3>, 3> demand{{{0.5, 1.5, 3.0}, {0.2, 0.5, 1.0}, {0.05, 0.1, 0.2}}};
  double demand_switch_prob = 0.05;
  double demand_jitter = 0.1;
  std::array<double, 3> base_delay_ms{10.0, 2.0, 20.0};
  double max_queue_s = 0.2;  // backlog cap, in seconds of current demand
  double cqi_phi = 0.95;
  double cqi_sigma = 0.5;
  double cqi_mean_lo = 5.0;
  double cqi_mean_hi = 14.0;
  double mbps_per_prb_per_eff = 0.18;
};

struct HandoverParams {
  double length_m = 600.0;
  double margin_m = 20.0;
  double p0_dbm = -45.0;
  double pathloss_exp = 3.5;
  double shadow_sigma_db = 4.0;
  double shadow_corr = 0.9;
  double speed_corr = 0.9;
  double speed_sigma = 3.0;
  double respawn_prob = 0.1;
  double load_mean = 0.45;
  double load_theta = 0.05;
  double load_sigma = 0.05;
  double noise_floor_dbm = -105.0;
  double bandwidth_mhz = 10.0;
  double base_delay_ms = 8.0;
  double interruption_ms = 30.0;
};

struct EnvConfig {
  std::uint64_t seed = 1;
  Task task = Task::slicing;
  double noise_frac = 0.02;
  bool expose_true_concepts = true;
  SlicingParams slicing;
  HandoverParams handover;
  RewardConfig reward;

  void validate() const {
    const auto& s = slicing;
    if (s.ue_min < 1 || s.ue_max > 64 || s.ue_min > s.ue_max)
      throw ConfigError("env: UE count range must satisfy 1 <= ue_min <= ue_max <= 64");
    if (s.n_prb <= 0) throw ConfigError("env: n_prb must be > 0");
    if (!(s.step_s > 0.0)) throw ConfigError("env: step_s must be > 0");
    if (s.churn_prob < 0 || s.churn_prob > 1 || s.demand_switch_prob < 0 || s.demand_switch_prob > 1)
      throw ConfigError("env: probabilities must be in [0,1]");
    if (!(s.cqi_mean_lo >= 1 && s.cqi_mean_hi <= 15 && s.cqi_mean_lo <= s.cqi_mean_hi))
      throw ConfigError("env: CQI mean range must lie in [1,15]");
    const auto& h = handover;
    if (!(h.length_m > 2 * h.margin_m) || h.margin_m <= 0)
      throw ConfigError("env: handover segment must be longer than twice the margin");
    if (!(h.pathloss_exp > 0) || h.shadow_sigma_db < 0 || h.respawn_prob < 0 || h.respawn_prob > 1)
      throw ConfigError("env: invalid handover channel parameters");
    if (h.interruption_ms < 0) throw ConfigError("env: interruption_ms must be >= 0");
    if (noise_frac < 0) throw ConfigError("env: noise_frac must be >= 0");
    reward.validate();
  }
};

struct StepOutcome {
  KpmState next;
  double reward = 0.0;
  std::vector<QosSample> qos;  // per served entity (per UE / the target UE)
  std::vector<double> prb;     // PRB usage per UE entering the efficiency term
  double v_thp = 0.0;
  double v_dly = 0.0;
  Vector true_concepts;        // of `next`; empty unless exposed
};

/// Spectral efficiency (bit/s/Hz) for CQI 1..15, linearly interpolated.
inline double cqi_efficiency(double cqi) {
  static constexpr std::array<double, 15> eff{0.1523, 0.2344, 0.3770, 0.6016, 0.8770,
                                              1.1758, 1.4766, 1.9141, 2.4063, 2.7305,
                                              3.3223, 3.9023, 4.5234, 5.1152, 5.5547};
  const double x = std::clamp(cqi, 1.0, 15.0) - 1.0;
  const auto i = static_cast<std::size_t>(std::min(std::floor(x), 13.0));
  const double f = x - static_cast<double>(i);
  return eff[i] + f * (eff[i + 1] - eff[i]);
}

namespace detail {

inline double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

inline double add_noise(Task task, int col, double x, double frac, Rng& rng) {
  const auto& m = kpm::info(task, col);
  const double z = normal(rng);  // drawn unconditionally to keep streams aligned
  if (!m.noisy) return x;
  return x + frac * (m.hi - m.lo) * z;
}

struct SlicingUeLatent {
  int slice;
  double demand;  // Mbit/s offered in the last step
  double cqi;
  double delay_ms;
};

/// c0 eMBB demand, c1 URLLC stress, c2 protected-slice load, c3 channel quality.
inline Vector slicing_true_concepts(std::span<const SlicingUeLatent> ues, const std::array<double, 3>& slice_usage,
                                   const RewardConfig& reward) {
  double embb = 0.0, stress = 0.0, cq = 0.0;
  for (const SlicingUeLatent& u : ues) {
    if (u.slice == 0) embb += u.demand;
    if (u.slice == 1)
      stress += 0.5 * (15.0 - u.cqi) / 14.0 + 0.5 * std::min(u.delay_ms / (4.0 * reward.dly_target[1]), 1.0);
    cq += (u.cqi - 1.0) / 14.0;
  }
  const double protected_load = slice_usage[1] + slice_usage[2];
  return {clamp01(embb / 40.0), clamp01(stress / 2.0), clamp01(protected_load / 0.5),
          ues.empty() ? 0.0 : clamp01(cq / static_cast<double>(ues.size()))};
}

class SlicingSim {
 public:
  explicit SlicingSim(const EnvConfig& cfg)
      : cfg_(cfg), p_(cfg.slicing), exo_(make_rng(cfg.seed, 1)), noise_(make_rng(cfg.seed, 2)) {}

  KpmState reset() {
    t_ = 0;
    ues_.clear();
    next_id_ = 0;
    for (int s = 0; s < 3; ++s) demand_state_[s] = static_cast<int>(uniform_index(exo_, 3));
    const int total =
        p_.ue_min + static_cast<int>(uniform_index(exo_, static_cast<std::uint64_t>(p_.ue_max - p_.ue_min + 1)));
    std::array<int, 3> count{0, 0, 0};
    for (int i = 0; i < total; ++i) {
      int s;
      if (total >= 3 && i < 3) s = i;
      else s = static_cast<int>(uniform_index(exo_, 3));
      ++count[s];
      add_ue(s);
    }
    sort_roster();
    for (Ue& u : ues_) u.demand = draw_demand(u);
    // Warm-up step under a uniform split so every KPM has a defined last outcome.
    serve(Action{1.0 / 3, 1.0 / 3, 1.0 / 3});
    advance_exogenous();
    return emit_state();
  }

  StepOutcome step(const Action& a) {
    validate_action(a);
    StepOutcome out;
    serve(a);
    out.qos.reserve(ues_.size());
    out.prb.reserve(ues_.size());
    for (const Ue& u : ues_) {
      out.qos.push_back({u.mu, cfg_.reward.thp_target[u.slice], u.omega, cfg_.reward.dly_target[u.slice]});
      out.prb.push_back(u.used_prb / p_.n_prb);
    }
    out.reward = slicing_reward(out.prb, out.qos, cfg_.reward);
    std::tie(out.v_thp, out.v_dly) = violation_rates(out.qos);
    ++t_;
    advance_exogenous();
    out.next = emit_state();
    if (cfg_.expose_true_concepts) out.true_concepts = true_concepts();
    return out;
  }

  Vector true_concepts() const {
    std::vector<SlicingUeLatent> lat;
    lat.reserve(ues_.size());
    for (const Ue& u : ues_) lat.push_back({u.slice, u.last_demand, u.cqi, u.omega});
    return slicing_true_concepts(lat, slice_usage_, cfg_.reward);
  }

 private:
  struct Ue {
    std::uint64_t id;
    int slice;
    double scale;       // per-UE demand multiplier
    double cqi_mean;
    double cqi;
    double demand = 0;  // Mbit/s for the upcoming step
    double last_demand = 0;
    double backlog = 0;  // Mbit
    double mu = 0, omega = 0, used_prb = 0, served = 0, arrivals = 0;
  };

  void validate_action(const Action& a) const {
    if (a.size() != 3) throw InvalidArgument("slicing action must have 3 entries");
    double sum = 0.0;
    for (double x : a) {
      if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("slicing ratio outside [0,1]; run the shield first");
      sum += x;
    }
    if (sum > 1.0 + 1e-9) throw InvalidArgument("slicing ratios sum above 1; run the shield first");
  }

  void add_ue(int slice) {
    Ue u;
    u.id = next_id_++;
    u.slice = slice;
    u.scale = uniform(exo_, 0.7, 1.3);
    u.cqi_mean = uniform(exo_, p_.cqi_mean_lo, p_.cqi_mean_hi);
    u.cqi = u.cqi_mean;
    u.omega = p_.base_delay_ms[slice];
    ues_.push_back(u);
  }

  void sort_roster() {
    std::stable_sort(ues_.begin(), ues_.end(), [](const Ue& a, const Ue& b) {
      return a.slice != b.slice ? a.slice < b.slice : a.id < b.id;
    });
  }

  double draw_demand(const Ue& u) {
    const double base = p_.demand[u.slice][demand_state_[u.slice]] * u.scale;
    return std::max(0.0, base * (1.0 + p_.demand_jitter * normal(exo_)));
  }

  void serve(const Action& a) {
    std::array<int, 3> count{0, 0, 0};
    for (const Ue& u : ues_) ++count[u.slice];
    slice_usage_ = {0, 0, 0};
    const double dt = p_.step_s;
    for (Ue& u : ues_) {
      const double alloc = a[u.slice] * p_.n_prb / count[u.slice];
      const double per_prb = cqi_efficiency(u.cqi) * p_.mbps_per_prb_per_eff;
      u.mu = alloc * per_prb;
      u.arrivals = u.demand * dt;
      const double queue = u.backlog + u.arrivals;
      u.served = std::min(u.mu * dt, queue);
      u.used_prb = per_prb > 0 ? u.served / (per_prb * dt) : 0.0;
      u.backlog = std::min(queue - u.served, p_.max_queue_s * std::max(u.demand, 1e-3));
      u.omega = std::min(p_.base_delay_ms[u.slice] + 1000.0 * u.backlog / (u.mu + 1e-3), 1000.0);
      u.last_demand = u.demand;
      slice_usage_[u.slice] += u.used_prb / p_.n_prb;
    }
  }

  void advance_exogenous() {
    for (int s = 0; s < 3; ++s) {
      if (bernoulli(exo_, p_.demand_switch_prob))
        demand_state_[s] = (demand_state_[s] + 1 + static_cast<int>(uniform_index(exo_, 2))) % 3;
    }
    for (Ue& u : ues_) {
      u.cqi = std::clamp(u.cqi_mean + p_.cqi_phi * (u.cqi - u.cqi_mean) + p_.cqi_sigma * normal(exo_), 1.0, 15.0);
    }
    if (bernoulli(exo_, p_.churn_prob)) churn();
    for (Ue& u : ues_) u.demand = draw_demand(u);
  }

  void churn() {
    const bool add = bernoulli(exo_, 0.5);
    const int n = static_cast<int>(ues_.size());
    if (add && n < p_.ue_max) {
      const int s = static_cast<int>(uniform_index(exo_, 3));
      add_ue(s);
      sort_roster();
    } else if (!add && n > p_.ue_min) {
      std::array<int, 3> count{0, 0, 0};
      for (const Ue& u : ues_) ++count[u.slice];
      std::vector<std::size_t> removable;
      for (std::size_t i = 0; i < ues_.size(); ++i)
        if (count[ues_[i].slice] > 1) removable.push_back(i);
      const std::size_t pick = uniform_index(exo_, std::max<std::size_t>(removable.size(), 1));
      if (!removable.empty()) ues_.erase(ues_.begin() + static_cast<std::ptrdiff_t>(removable[pick]));
    }
  }

  KpmState emit_state() {
    KpmState s;
    s.task = Task::slicing;
    s.t = t_;
    s.values = Matrix(ues_.size(), kpm::slicing_count);
    const double frac = cfg_.noise_frac;
    std::array<double, 3> usage{};
    for (int k = 0; k < 3; ++k)
      usage[k] = std::max(0.0, add_noise(Task::slicing, kpm::slice_prb_embb + k, slice_usage_[k], frac, noise_));
    const double tot = usage[0] + usage[1] + usage[2];
    if (tot > 1.0)
      for (double& u : usage) u /= tot;
    for (std::size_t g = 0; g < ues_.size(); ++g) {
      const Ue& u = ues_[g];
      auto row = s.values.row(g);
      const double snr = -6.0 + 2.2 * u.cqi;
      const double raw[9] = {u.cqi,
                             snr,
                             u.used_prb,
                             0.3 * u.used_prb,
                             u.served / p_.step_s,
                             0.2 * u.served / p_.step_s,
                             u.omega,
                             0.5 * u.omega + p_.base_delay_ms[u.slice],
                             u.arrivals};
      for (int m = 0; m < 9; ++m) row[m] = add_noise(Task::slicing, m, raw[m], frac, noise_);
      row[kpm::cqi] = std::clamp(row[kpm::cqi], 1.0, 15.0);
      for (int m : {kpm::prb_dl, kpm::prb_ul, kpm::thp_dl, kpm::thp_ul, kpm::dly_dl, kpm::dly_ul, kpm::vol_dl})
        row[m] = std::max(0.0, row[m]);
      for (int k = 0; k < 3; ++k) row[kpm::slice_prb_embb + k] = usage[k];
      s.roster.push_back(slice_tag(u.slice));
    }
    return s;
  }

  const EnvConfig& cfg_;
  const SlicingParams& p_;
  Rng exo_, noise_;
  std::int64_t t_ = 0;
  std::uint64_t next_id_ = 0;
  std::array<int, 3> demand_state_{0, 0, 0};
  std::array<double, 3> slice_usage_{0, 0, 0};
  std::vector<Ue> ues_;
};

class HandoverSim {
 public:
  explicit HandoverSim(const EnvConfig& cfg)
      : cfg_(cfg), p_(cfg.handover), exo_(make_rng(cfg.seed, 3)), noise_(make_rng(cfg.seed, 4)) {}

  KpmState reset() {
    t_ = 0;
    x_ = uniform(exo_, p_.margin_m, p_.length_m - p_.margin_m);
    v_ = 0.0;
    shadow_ = {p_.shadow_sigma_db * normal(exo_), p_.shadow_sigma_db * normal(exo_)};
    load_ = {std::clamp(p_.load_mean + 0.15 * normal(exo_), 0.02, 0.98),
             std::clamp(p_.load_mean + 0.15 * normal(exo_), 0.02, 0.98)};
    serving_ = rsrp(0) >= rsrp(1) ? 0 : 1;
    since_switch_ = never_switched;
    switched_ = false;
    measure_qos();
    return emit_state();
  }

  StepOutcome step(const Action& a) {
    const int code = handover_code(a);
    StepOutcome out;
    switched_ = code == 1;
    if (switched_) {
      serving_ = 1 - serving_;
      since_switch_ = 0;
    } else if (since_switch_ < never_switched) {
      ++since_switch_;
    }
    measure_qos();
    out.qos = {QosSample{mu_, cfg_.reward.ho_thp_target, omega_, cfg_.reward.ho_dly_target}};
    out.reward = handover_reward(out.qos[0], cfg_.reward);
    std::tie(out.v_thp, out.v_dly) = violation_rates(out.qos);
    ++t_;
    advance_exogenous();
    out.next = emit_state();
    if (cfg_.expose_true_concepts) out.true_concepts = true_concepts();
    return out;
  }

  /// c4 serving signal, c5 target signal, c6 serving load, c7 target load, c8 QoS degradation.
  Vector true_concepts() const {
    const int tgt = 1 - serving_;
    const double deg = 0.5 * std::max(0.0, 1.0 - mu_ / (2.0 * cfg_.reward.ho_thp_target)) +
                       0.5 * std::min(omega_ / (2.0 * cfg_.reward.ho_dly_target), 1.0);
    return {clamp01((rsrp(serving_) + 120.0) / 60.0), clamp01((rsrp(tgt) + 120.0) / 60.0),
            load_[serving_], load_[tgt], clamp01(deg)};
  }

 private:
  double distance(int cell) const { return cell == 0 ? x_ : p_.length_m - x_; }

  double rsrp(int cell) const {
    const double d = std::max(distance(cell), 1.0);
    return std::clamp(p_.p0_dbm - 10.0 * p_.pathloss_exp * std::log10(d / 10.0) + shadow_[cell], -140.0, -40.0);
  }

  double sinr(int cell) const {
    const int other = 1 - cell;
    const double interf = std::pow(10.0, rsrp(other) / 10.0) * (0.2 + 0.8 * load_[other]) +
                          std::pow(10.0, p_.noise_floor_dbm / 10.0);
    return rsrp(cell) - 10.0 * std::log10(interf);
  }

  void measure_qos() {
    const double s = sinr(serving_);
    const double load = load_[serving_];
    mu_ = std::min(100.0, p_.bandwidth_mhz * std::log2(1.0 + std::pow(10.0, s / 10.0)) * (1.0 - 0.7 * load));
    omega_ = p_.base_delay_ms + 25.0 * load / (1.05 - load) + 10.0 * std::max(0.0, 5.0 - s) / 5.0;
    if (switched_) omega_ += p_.interruption_ms;
    sinr_ = s;
  }

  void advance_exogenous() {
    v_ = p_.speed_corr * v_ + p_.speed_sigma * normal(exo_);
    x_ += v_;
    const double lo = p_.margin_m, hi = p_.length_m - p_.margin_m;
    if (x_ < lo) {
      x_ = 2 * lo - x_;
      v_ = -v_;
    }
    if (x_ > hi) {
      x_ = 2 * hi - x_;
      v_ = -v_;
    }
    x_ = std::clamp(x_, lo, hi);
    const double innov = p_.shadow_sigma_db * std::sqrt(1.0 - p_.shadow_corr * p_.shadow_corr);
    for (double& sh : shadow_) sh = p_.shadow_corr * sh + innov * normal(exo_);
    for (double& l : load_)
      l = std::clamp(l + p_.load_theta * (p_.load_mean - l) + p_.load_sigma * normal(exo_), 0.02, 0.98);
    const bool respawn = bernoulli(exo_, p_.respawn_prob);
    const double new_x = uniform(exo_, lo, hi);
    const int new_serving = static_cast<int>(uniform_index(exo_, 2));
    if (respawn) {
      x_ = new_x;
      v_ = 0.0;
      serving_ = new_serving;
      since_switch_ = never_switched;
    }
  }

  KpmState emit_state() {
    KpmState s;
    s.task = Task::handover;
    s.t = t_;
    s.since_switch = since_switch_;
    s.values = Matrix(2, kpm::handover_count);
    s.roster = {EntityTag::serv, EntityTag::tgt};
    const int tgt = 1 - serving_;
    const double rs = rsrp(serving_), rt = rsrp(tgt);
    auto rsrq = [&](int cell) {
      return std::clamp(-6.0 - 8.0 * load_[cell] + 0.1 * (rsrp(cell) + 90.0), -20.0, -3.0);
    };
    const double nack = 0.5 * sigmoid(-(sinr_ - 3.0) / 2.0);
    const double raw[19] = {static_cast<double>(serving_),
                            rs,
                            rsrq(serving_),
                            sinr(serving_),
                            rt,
                            rsrq(tgt),
                            sinr(tgt),
                            mu_,
                            0.3 * mu_,
                            omega_,
                            0.8 * omega_ + 2.0,
                            std::clamp(1.0 + (sinr_ + 6.0) / 2.5, 1.0, 15.0),
                            rs - p_.noise_floor_dbm,
                            nack,
                            0.8 * nack,
                            load_[serving_],
                            0.6 * load_[serving_],
                            load_[tgt],
                            0.6 * load_[tgt]};
    auto row = s.values.row(0);
    for (int m = 0; m < 19; ++m) row[m] = add_noise(Task::handover, m, raw[m], cfg_.noise_frac, noise_);
    using namespace kpm;
    for (int m : {ho_srv_rsrp, ho_nbr_rsrp}) row[m] = std::clamp(row[m], -140.0, -40.0);
    for (int m : {ho_srv_rsrq, ho_nbr_rsrq}) row[m] = std::clamp(row[m], -20.0, -3.0);
    row[ho_cqi] = std::clamp(row[ho_cqi], 1.0, 15.0);
    for (int m : {ho_thp_dl, ho_thp_ul, ho_dly_dl, ho_dly_ul}) row[m] = std::max(0.0, row[m]);
    for (int m : {ho_harq_dl, ho_harq_ul, ho_srv_prb_dl, ho_srv_prb_ul, ho_nbr_prb_dl, ho_nbr_prb_ul})
      row[m] = clamp01(row[m]);
    // Both rows carry the UE report; column s12 names the row's own cell.
    auto row1 = s.values.row(1);
    std::copy(row.begin(), row.end(), row1.begin());
    row1[ho_cell] = static_cast<double>(tgt);
    return s;
  }

  const EnvConfig& cfg_;
  const HandoverParams& p_;
  Rng exo_, noise_;
  std::int64_t t_ = 0;
  double x_ = 0, v_ = 0;
  std::array<double, 2> shadow_{0, 0};
  std::array<double, 2> load_{0.5, 0.5};
  int serving_ = 0;
  std::int64_t since_switch_ = never_switched;
  bool switched_ = false;
  double mu_ = 0, omega_ = 0, sinr_ = 0;
};

}  // namespace detail

/// Seeded simulator for one task. All randomness is exogenous to the policy,
/// so two rollouts with the same seed see identical traffic and channels.
class Environment {
 public:
  explicit Environment(EnvConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.task == Task::slicing) slicing_ = std::make_unique<detail::SlicingSim>(cfg_);
    else handover_ = std::make_unique<detail::HandoverSim>(cfg_);
    reset();
  }

  Environment(const Environment&) = delete;
  Environment& operator=(const Environment&) = delete;

  const EnvConfig& config() const noexcept { return cfg_; }
  Task task() const noexcept { return cfg_.task; }
  const KpmState& state() const noexcept { return state_; }

  const KpmState& reset() {
    if (slicing_) {
      slicing_ = std::make_unique<detail::SlicingSim>(cfg_);
      state_ = slicing_->reset();
    } else {
      handover_ = std::make_unique<detail::HandoverSim>(cfg_);
      state_ = handover_->reset();
    }
    return state_;
  }

  StepOutcome step(const Action& a) {
    StepOutcome out = slicing_ ? slicing_->step(a) : handover_->step(a);
    state_ = out.next;
    return out;
  }

  /// Hidden concepts of the current state (diagnostic); empty unless exposed.
  Vector true_concepts() const {
    if (!cfg_.expose_true_concepts) return {};
    return slicing_ ? slicing_->true_concepts() : handover_->true_concepts();
  }

 private:
  EnvConfig cfg_;
  std::unique_ptr<detail::SlicingSim> slicing_;
  std::unique_ptr<detail::HandoverSim> handover_;
  KpmState state_;
};

}  // namespace symran
