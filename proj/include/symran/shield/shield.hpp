#pragma once

#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symran/core/errors.hpp"
#include "symran/env/kpm.hpp"
#include "symran/shield/bank.hpp"
#include "symran/shield/correction.hpp"
#include "symran/shield/risk.hpp"

namespace symran {

enum class ShieldSource { passthrough, retrieval };

inline std::string_view to_string(ShieldSource s) { return s == ShieldSource::passthrough ? "passthrough" : "retrieval"; }

struct ShieldDecision {
  std::int64_t t = 0;
  Action action;
  std::optional<double> q;  // unset when the retrieval stage is disabled
  bool triggered = false;
  ShieldSource source = ShieldSource::passthrough;
  std::string warning;
};

/// Correction rules, then risk-gated retrieval from the bank. Either stage can
/// be switched off for ablations.
struct ShieldStages {
  bool correction = true;
  bool retrieval = true;
};

inline ShieldDecision shield_action(std::span<const CorrectionRule> rules, const RiskEstimator* estimator,
                                    const SafeBank* bank, const Action& a_hat, std::span<const double> c,
                                    const KpmState& s, ShieldStages stages = {}) {
  ShieldDecision d;
  d.t = s.t;
  d.action = stages.correction ? apply_correction_rules(rules, a_hat, s) : a_hat;
  if (!stages.retrieval) return d;
  if (!estimator) throw InvalidArgument("shield_action: retrieval stage needs a risk estimator");
  const double delta = estimator->delta();  // throws when uncalibrated
  d.q = estimator->score(c, d.action);
  if (!(*d.q > delta)) return d;
  d.triggered = true;
  if (!bank || bank->empty()) {
    d.warning = "shield: risk gate open but the safe bank is empty; passing the corrected action through";
    return d;
  }
  d.source = ShieldSource::retrieval;
  const Action& safe = retrieve_safe(*bank, c);
  d.action = stages.correction ? apply_correction_rules(rules, safe, s) : safe;
  return d;
}

inline nlohmann::json decision_to_json(const ShieldDecision& d) {
  nlohmann::json j;
  j["t"] = d.t;
  j["q"] = d.q ? nlohmann::json(*d.q) : nlohmann::json(nullptr);
  j["triggered"] = d.triggered;
  j["source"] = std::string(to_string(d.source));
  return j;
}

class Shield {
 public:
  Shield(std::vector<CorrectionRule> rules, std::shared_ptr<const RiskEstimator> estimator,
         std::shared_ptr<const SafeBank> bank, ShieldStages stages = {})
      : rules_(std::move(rules)), estimator_(std::move(estimator)), bank_(std::move(bank)), stages_(stages) {
    sort_rules(rules_);
    if (stages_.retrieval && (!estimator_ || !estimator_->calibrated()))
      throw InvalidArgument("Shield: retrieval stage needs a calibrated risk estimator");
  }

  const std::vector<CorrectionRule>& rules() const noexcept { return rules_; }
  const ShieldStages& stages() const noexcept { return stages_; }
  const std::shared_ptr<const SafeBank>& bank() const noexcept { return bank_; }
  const std::shared_ptr<const RiskEstimator>& estimator() const noexcept { return estimator_; }

  ShieldDecision decide(const Action& a_hat, std::span<const double> c, const KpmState& s) const {
    return shield_action(rules_, estimator_.get(), bank_.get(), a_hat, c, s, stages_);
  }

  /// decide() plus logging.
  Action operator()(const Action& a_hat, std::span<const double> c, const KpmState& s) {
    ShieldDecision d = decide(a_hat, c, s);
    if (d.triggered) ++triggers_;
    if (!d.warning.empty()) ++warnings_;
    if (keep_log_) log_.push_back(decision_to_json(d));
    return std::move(d.action);
  }

  void keep_log(bool on) noexcept { keep_log_ = on; }
  const std::vector<nlohmann::json>& log() const noexcept { return log_; }
  std::size_t triggers() const noexcept { return triggers_; }
  std::size_t warnings() const noexcept { return warnings_; }
  void reset_counters() {
    log_.clear();
    triggers_ = warnings_ = 0;
  }

  void write_log(std::ostream& os) const {
    for (const auto& j : log_) os << j.dump() << '\n';
  }

 private:
  std::vector<CorrectionRule> rules_;
  std::shared_ptr<const RiskEstimator> estimator_;
  std::shared_ptr<const SafeBank> bank_;
  ShieldStages stages_;
  bool keep_log_ = false;
  std::vector<nlohmann::json> log_;
  std::size_t triggers_ = 0, warnings_ = 0;
};

}  // namespace symran
