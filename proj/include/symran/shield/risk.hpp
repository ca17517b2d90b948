#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symran/core/adam.hpp"
#include "symran/core/errors.hpp"
#include "symran/core/net.hpp"
#include "symran/core/net_json.hpp"
#include "symran/core/rng.hpp"
#include "symran/core/tensor.hpp"
#include "symran/env/kpm.hpp"
#include "symran/shield/bank.hpp"

namespace symran {

struct RiskConfig {
  std::size_t hidden = 32;
  std::size_t steps = 1500;
  std::size_t batch = 128;  // 0 = full batch
  double lr = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden < 1) throw ConfigError("risk: hidden width must be >= 1");
    if (steps < 1) throw ConfigError("risk: steps must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("risk: lr must be > 0");
  }
};

inline Vector risk_input(std::span<const double> c, std::span<const double> a) {
  Vector x(c.begin(), c.end());
  x.insert(x.end(), a.begin(), a.end());
  return x;
}

/// q(c, a) = sigmoid(net(c ++ a)); y = 1 marks an unsafe decision.
class RiskEstimator {
 public:
  RiskEstimator() = default;
  RiskEstimator(FeedForwardNet net, std::size_t concept_dim, std::size_t action_dim)
      : net_(std::move(net)), k_(concept_dim), a_(action_dim) {
    require_dim(net_.input_dim() == k_ + a_ && net_.output_dim() == 1, "RiskEstimator: net shape mismatch");
  }

  static RiskEstimator init(std::size_t concept_dim, std::size_t action_dim, std::size_t hidden, Rng& rng) {
    return {FeedForwardNet::glorot({concept_dim + action_dim, hidden, hidden, 1},
                                   {Activation::tanh, Activation::tanh, Activation::identity}, rng),
            concept_dim, action_dim};
  }

  std::size_t concept_dim() const noexcept { return k_; }
  std::size_t action_dim() const noexcept { return a_; }
  const FeedForwardNet& net() const noexcept { return net_; }
  FeedForwardNet& net() noexcept { return net_; }

  double logit(std::span<const double> c, std::span<const double> a) const {
    require_dim(c.size() == k_ && a.size() == a_, "risk: input dimension mismatch");
    return net_.forward(risk_input(c, a))[0];
  }
  double score(std::span<const double> c, std::span<const double> a) const { return sigmoid(logit(c, a)); }

  bool calibrated() const noexcept { return delta_.has_value(); }
  double delta() const {
    if (!delta_) throw InvalidArgument("risk estimator is not calibrated (delta unset)");
    return *delta_;
  }
  void set_delta(double d) {
    if (!std::isfinite(d) || d < 0.0 || d > 1.0) throw InvalidArgument("risk: delta must lie in [0, 1]");
    delta_ = d;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"version", 1}, {"concept_dim", k_}, {"action_dim", a_}, {"net", net_to_json(net_)}};
    j["delta"] = delta_ ? nlohmann::json(*delta_) : nlohmann::json(nullptr);
    return j;
  }

  static RiskEstimator from_json(const nlohmann::json& j) {
    try {
      if (j.at("version").get<int>() != 1) throw ArtifactError("risk JSON: unsupported version");
      RiskEstimator r(net_from_json(j.at("net")), j.at("concept_dim").get<std::size_t>(),
                      j.at("action_dim").get<std::size_t>());
      if (j.contains("delta") && !j.at("delta").is_null()) r.set_delta(j.at("delta").get<double>());
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(std::string("risk JSON: ") + e.what());
    } catch (const DimensionError& e) {
      throw ArtifactError(std::string("risk JSON: ") + e.what());
    }
  }

  bool operator==(const RiskEstimator&) const = default;

 private:
  FeedForwardNet net_;
  std::size_t k_ = 0, a_ = 0;
  std::optional<double> delta_;
};

struct RiskData {
  std::vector<Vector> c;
  std::vector<Action> a;
  std::vector<int> y;

  std::size_t size() const noexcept { return y.size(); }
  void push(Vector ci, Action ai, int yi) {
    c.push_back(std::move(ci));
    a.push_back(std::move(ai));
    y.push_back(yi);
  }
};

/// Labelled triples from a trace: y_i from the window outcome starting at i.
inline RiskData risk_data_from_trace(std::span<const TraceRecord> records, const ConceptFn& concepts,
                                     const BankConfig& cfg) {
  cfg.validate();
  const std::vector<int> labels = window_labels(records, cfg.horizon, cfg.tolerance);
  RiskData d;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (labels[i] >= 0) d.push(concepts(records[i]), records[i].a, labels[i]);
  return d;
}

/// Mean binary cross-entropy over the given rows; adds dBCE/dparams to grad.
inline double risk_bce(const RiskEstimator& r, const RiskData& d, std::span<const std::size_t> rows,
                       Vector* grad = nullptr) {
  const FeedForwardNet& net = r.net();
  if (grad) require_dim(grad->size() == net.parameter_count(), "risk_bce: gradient size mismatch");
  ForwardCache cache;
  const double scale = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;
  for (std::size_t i : rows) {
    const double o = net.forward(risk_input(d.c[i], d.a[i]), cache)[0];
    const double y = static_cast<double>(d.y[i]);
    total += softplus(o) - y * o;
    if (grad) {
      const double adj = (sigmoid(o) - y) * scale;
      net.backward(cache, std::span<const double>(&adj, 1), *grad);
    }
  }
  return total * scale;
}

inline double risk_bce(const RiskEstimator& r, const RiskData& d, Vector* grad = nullptr) {
  std::vector<std::size_t> rows(d.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return risk_bce(r, d, rows, grad);
}

struct RiskFit {
  RiskEstimator estimator;
  std::vector<double> loss_history;
  std::vector<std::string> warnings;
};

inline RiskFit train_risk_estimator(const RiskData& d, const RiskConfig& cfg = {}) {
  cfg.validate();
  if (d.size() == 0) throw InvalidArgument("train_risk_estimator: empty dataset");
  require_dim(d.c.size() == d.size() && d.a.size() == d.size(), "train_risk_estimator: ragged dataset");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.y[i] != 0 && d.y[i] != 1) throw InvalidArgument("train_risk_estimator: labels must be 0 or 1");
    require_dim(d.c[i].size() == d.c[0].size() && d.a[i].size() == d.a[0].size(),
                "train_risk_estimator: inconsistent input dimensions");
    positives += static_cast<std::size_t>(d.y[i]);
  }
  RiskFit fit;
  if (d.size() < 2) fit.warnings.push_back("risk: fewer than 2 training examples");
  if (positives == 0 || positives == d.size())
    fit.warnings.push_back(std::string("risk: single-class labels (all ") + (positives ? "unsafe" : "safe") +
                           "); q fits the class prior");

  Rng init = make_rng(cfg.seed, 0x51);
  fit.estimator = RiskEstimator::init(d.c[0].size(), d.a[0].size(), cfg.hidden, init);
  Rng order = make_rng(cfg.seed, 0x52);
  AdamState opt(fit.estimator.net().parameter_count(), {.lr = cfg.lr});
  const std::size_t batch = cfg.batch == 0 ? d.size() : std::min(cfg.batch, d.size());
  std::vector<std::size_t> perm(d.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::size_t cursor = perm.size();
  Vector grad;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + batch > perm.size()) {
      shuffle(perm, order);
      cursor = 0;
    }
    std::span<const std::size_t> rows(perm.data() + cursor, batch);
    cursor += batch;
    grad.assign(fit.estimator.net().parameter_count(), 0.0);
    const double loss = risk_bce(fit.estimator, d, rows, &grad);
    if (!std::isfinite(loss)) throw NumericError("risk: non-finite training loss");
    fit.loss_history.push_back(loss);
    Vector p = fit.estimator.net().parameters();
    opt.step(p, grad);
    fit.estimator.net().set_parameters(p);
  }
  return fit;
}

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
inline double nearest_rank(std::vector<double> xs, double p) {
  if (xs.empty()) throw InvalidArgument("nearest_rank: empty sample");
  if (!(p > 0.0 && p <= 100.0)) throw InvalidArgument("nearest_rank: percentile must lie in (0, 100]");
  std::sort(xs.begin(), xs.end());
  const auto n = static_cast<double>(xs.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, xs.size());
  return xs[rank - 1];
}

/// delta = nearest-rank p-th percentile of q over the bank entries.
inline double calibrate_threshold(RiskEstimator& r, const SafeBank& bank, double p = 95.0) {
  if (bank.empty()) throw InvalidArgument("calibrate_threshold: empty bank");
  std::vector<double> scores;
  scores.reserve(bank.size());
  for (const BankEntry& e : bank) scores.push_back(r.score(e.c, e.a));
  const double d = nearest_rank(std::move(scores), p);
  r.set_delta(d);
  return d;
}

}  // namespace symran
