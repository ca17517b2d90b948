#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symran/core/errors.hpp"
#include "symran/core/net.hpp"
#include "symran/core/tensor.hpp"
#include "symran/env/kpm.hpp"

namespace symran {

enum class PredicateKind { low, high, comparison };

inline std::string to_string(PredicateKind k) {
  switch (k) {
    case PredicateKind::low: return "threshold-low";
    case PredicateKind::high: return "threshold-high";
    case PredicateKind::comparison: return "comparison";
  }
  return "threshold-low";
}

inline PredicateKind predicate_kind_from_string(const std::string& s) {
  if (s == "threshold-low") return PredicateKind::low;
  if (s == "threshold-high") return PredicateKind::high;
  if (s == "comparison") return PredicateKind::comparison;
  throw InvalidArgument("unknown predicate kind '" + s + "'");
}

inline double softplus_inverse(double y) {
  require(y > 0.0, "softplus_inverse: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

/// v = sigmoid(g * (sign . c) + b) with gain g = softplus(rho) > 0.
/// low: -g*c_k, high: +g*c_k, comparison: g*c_k - g*c_k2.
struct Predicate {
  PredicateKind kind = PredicateKind::high;
  int k = 0;
  int k2 = -1;  // comparison only
  double rho = 0.0;
  double bias = 0.0;

  double gain() const { return softplus(rho); }
  double feature(std::span<const double> c) const {
    switch (kind) {
      case PredicateKind::low: return -c[static_cast<std::size_t>(k)];
      case PredicateKind::high: return c[static_cast<std::size_t>(k)];
      case PredicateKind::comparison: return c[static_cast<std::size_t>(k)] - c[static_cast<std::size_t>(k2)];
    }
    return 0.0;
  }
  double pre_activation(std::span<const double> c) const { return gain() * feature(c) + bias; }
  double value(std::span<const double> c) const { return sigmoid(pre_activation(c)); }

  bool operator==(const Predicate&) const = default;
};

struct Rule {
  std::vector<int> predicates;  // sorted, size 1..3
  int head = 0;
  double w = 0.0;  // attention parameter
  bool operator==(const Rule&) const = default;
};

/// Product t-norm over the member confidences.
inline double rule_activation(const Rule& r, std::span<const double> v) {
  double a = 1.0;
  for (int p : r.predicates) a *= v[static_cast<std::size_t>(p)];
  return a;
}

/// Predicate vocabulary plus rules partitioned by head.
class RuleSet {
 public:
  RuleSet() = default;
  RuleSet(std::size_t num_concepts, std::size_t num_heads, std::vector<Predicate> preds, std::vector<Rule> rules,
          double kappa, double w_th)
      : K_(num_concepts), heads_(num_heads), preds_(std::move(preds)), rules_(std::move(rules)), kappa_(kappa),
        w_th_(w_th) {
    validate();
    rebuild_partitions();
  }

  std::size_t num_concepts() const noexcept { return K_; }
  std::size_t num_heads() const noexcept { return heads_; }
  double kappa() const noexcept { return kappa_; }
  double w_th() const noexcept { return w_th_; }
  const std::vector<Predicate>& predicates() const noexcept { return preds_; }
  const std::vector<Rule>& rules() const noexcept { return rules_; }
  const std::vector<int>& partition(std::size_t n) const { return part_.at(n); }

  Vector valuate(std::span<const double> c) const {
    require_dim(c.size() == K_, "valuate_predicates: concept vector has the wrong length");
    Vector v(preds_.size());
    for (std::size_t p = 0; p < preds_.size(); ++p) v[p] = preds_[p].value(c);
    return v;
  }

  /// Softmax of w_u within each head's partition.
  Vector attention() const {
    Vector alpha(rules_.size(), 0.0);
    for (const auto& part : part_) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int u : part) mx = std::max(mx, rules_[static_cast<std::size_t>(u)].w);
      double s = 0.0;
      for (int u : part) s += alpha[static_cast<std::size_t>(u)] = std::exp(rules_[static_cast<std::size_t>(u)].w - mx);
      for (int u : part) alpha[static_cast<std::size_t>(u)] /= s;
    }
    return alpha;
  }

  Vector logits_from_valuation(std::span<const double> v, std::span<const double> alpha) const {
    Vector z(heads_, 0.0);
    for (std::size_t u = 0; u < rules_.size(); ++u)
      z[static_cast<std::size_t>(rules_[u].head)] += alpha[u] * rule_activation(rules_[u], v);
    return z;
  }

  Vector logits(std::span<const double> c) const { return logits_from_valuation(valuate(c), attention()); }

  /// Flat trainable vector: per predicate (rho, bias), then per rule w.
  std::size_t parameter_count() const noexcept { return 2 * preds_.size() + rules_.size(); }
  Vector parameters() const {
    Vector p;
    p.reserve(parameter_count());
    for (const auto& q : preds_) {
      p.push_back(q.rho);
      p.push_back(q.bias);
    }
    for (const auto& r : rules_) p.push_back(r.w);
    return p;
  }
  void set_parameters(std::span<const double> p) {
    require_dim(p.size() == parameter_count(), "RuleSet::set_parameters: size mismatch");
    std::size_t i = 0;
    for (auto& q : preds_) {
      q.rho = p[i++];
      q.bias = p[i++];
    }
    for (auto& r : rules_) r.w = p[i++];
  }

  /// Adds d loss / d params for one concept vector given d loss / d logits.
  void accumulate_gradient(std::span<const double> c, std::span<const double> v, std::span<const double> alpha,
                           std::span<const double> dz, Vector& grad) const {
    const std::size_t P = preds_.size();
    Vector dv(P, 0.0);
    std::vector<double> zhat = logits_from_valuation(v, alpha);
    for (std::size_t u = 0; u < rules_.size(); ++u) {
      const Rule& r = rules_[u];
      const double g = dz[static_cast<std::size_t>(r.head)];
      if (g == 0.0) continue;
      const double act = rule_activation(r, v);
      grad[2 * P + u] += g * alpha[u] * (act - zhat[static_cast<std::size_t>(r.head)]);
      for (std::size_t i = 0; i < r.predicates.size(); ++i) {
        double others = 1.0;
        for (std::size_t j = 0; j < r.predicates.size(); ++j)
          if (j != i) others *= v[static_cast<std::size_t>(r.predicates[j])];
        dv[static_cast<std::size_t>(r.predicates[i])] += g * alpha[u] * others;
      }
    }
    for (std::size_t p = 0; p < P; ++p) {
      if (dv[p] == 0.0) continue;
      const double dpre = dv[p] * v[p] * (1.0 - v[p]);
      grad[2 * p] += dpre * preds_[p].feature(c) * sigmoid(preds_[p].rho);
      grad[2 * p + 1] += dpre;
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json jp = nlohmann::json::array(), jr = nlohmann::json::array();
    for (const auto& q : preds_) {
      nlohmann::json o{{"kind", to_string(q.kind)}, {"concept", q.k}, {"rho", q.rho}, {"bias", q.bias}};
      if (q.kind == PredicateKind::comparison) o["concept2"] = q.k2;
      jp.push_back(o);
    }
    for (const auto& r : rules_) jr.push_back({{"predicates", r.predicates}, {"head", r.head}, {"w", r.w}});
    return {{"version", 1},  {"num_concepts", K_}, {"num_heads", heads_}, {"kappa", kappa_},
            {"w_th", w_th_}, {"predicates", jp},   {"rules", jr}};
  }

  static RuleSet from_json(const nlohmann::json& j) {
    try {
      if (j.at("version").get<int>() != 1) throw ArtifactError("ruleset JSON: unsupported version");
      std::vector<Predicate> preds;
      for (const auto& o : j.at("predicates")) {
        Predicate q;
        q.kind = predicate_kind_from_string(o.at("kind").get<std::string>());
        q.k = o.at("concept").get<int>();
        if (q.kind == PredicateKind::comparison) q.k2 = o.at("concept2").get<int>();
        q.rho = o.at("rho").get<double>();
        q.bias = o.at("bias").get<double>();
        preds.push_back(q);
      }
      std::vector<Rule> rules;
      for (const auto& o : j.at("rules"))
        rules.push_back({o.at("predicates").get<std::vector<int>>(), o.at("head").get<int>(), o.at("w").get<double>()});
      return RuleSet(j.at("num_concepts").get<std::size_t>(), j.at("num_heads").get<std::size_t>(), std::move(preds),
                     std::move(rules), j.at("kappa").get<double>(), j.at("w_th").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(std::string("ruleset JSON: ") + e.what());
    } catch (const InvalidArgument& e) {
      throw ArtifactError(std::string("ruleset JSON: ") + e.what());
    }
  }

  bool operator==(const RuleSet& o) const {
    return K_ == o.K_ && heads_ == o.heads_ && preds_ == o.preds_ && rules_ == o.rules_ && kappa_ == o.kappa_ &&
           w_th_ == o.w_th_;
  }

 private:
  void validate() const {
    if (!(kappa_ > 0.0)) throw ConfigError("ruleset: temperature must be positive");
    if (!(w_th_ >= 0.0 && w_th_ <= 1.0)) throw ConfigError("ruleset: pruning threshold must lie in [0, 1]");
    require(heads_ >= 1, "ruleset: need at least one head");
    const int K = static_cast<int>(K_);
    for (const auto& q : preds_) {
      require(q.k >= 0 && q.k < K, "ruleset: predicate concept out of range");
      if (q.kind == PredicateKind::comparison)
        require(q.k2 >= 0 && q.k2 < K && q.k2 != q.k, "ruleset: comparison needs two distinct concepts");
    }
    std::vector<bool> covered(heads_, false);
    for (const auto& r : rules_) {
      require(!r.predicates.empty() && r.predicates.size() <= 3, "ruleset: conjunction size must be 1-3");
      require(r.head >= 0 && r.head < static_cast<int>(heads_), "ruleset: rule head out of range");
      for (int p : r.predicates)
        require(p >= 0 && p < static_cast<int>(preds_.size()), "ruleset: predicate index out of range");
      covered[static_cast<std::size_t>(r.head)] = true;
    }
    for (bool c : covered)
      if (!c) throw InvalidArgument("ruleset: every head needs at least one rule");
  }

  void rebuild_partitions() {
    part_.assign(heads_, {});
    for (std::size_t u = 0; u < rules_.size(); ++u) part_[static_cast<std::size_t>(rules_[u].head)].push_back(static_cast<int>(u));
  }

  std::size_t K_ = 0;
  std::size_t heads_ = 0;
  std::vector<Predicate> preds_;
  std::vector<Rule> rules_;
  double kappa_ = 2.0;
  double w_th_ = 0.1;
  std::vector<std::vector<int>> part_;
};

/// Display names for the concepts of a task: c0..c3 for slicing, c4..c8 for handover.
inline std::vector<std::string> concept_symbols(Task task) {
  std::vector<std::string> out;
  const int first = task == Task::slicing ? 0 : 4;
  const int n = task == Task::slicing ? 4 : 5;
  for (int i = 0; i < n; ++i) out.push_back("c" + std::to_string(first + i));
  return out;
}

inline std::vector<std::string> action_labels(Task task) {
  if (task == Task::handover) return {"stay", "switch"};
  return {"eMBB", "URLLC", "mMTC"};
}

}  // namespace symran
