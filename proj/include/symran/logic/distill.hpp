#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "symran/core/adam.hpp"
#include "symran/core/errors.hpp"
#include "symran/core/rng.hpp"
#include "symran/core/softmax.hpp"
#include "symran/dsr/search.hpp"
#include "symran/logic/rules.hpp"
#include "symran/logic/table.hpp"
#include "symran/teacher/trace.hpp"

namespace symran {

struct LogicConfig {
  double kappa = 2.0;
  double w_th = 0.1;
  std::size_t top_triples = 50;  // size-3 conjunctions kept per head
  std::vector<std::pair<int, int>> comparisons;  // (k, k2): predicate on c_k - c_k2
  double init_gain = 40.0;
  std::size_t steps = 3000;
  std::size_t batch = 1000;  // 0 = full batch
  double lr = 0.1;
  double lr_final = 0.1;  // lr decays linearly to lr * lr_final
  std::uint64_t seed = 0;

  void validate() const {
    if (!(kappa > 0.0)) throw ConfigError("logic: kappa must be positive");
    if (!(w_th >= 0.0 && w_th <= 1.0)) throw ConfigError("logic: w_th must lie in [0, 1]");
    if (!(init_gain > 0.0)) throw ConfigError("logic: init_gain must be positive");
    if (!(lr > 0.0)) throw ConfigError("logic: lr must be positive");
    if (!(lr_final > 0.0 && lr_final <= 1.0)) throw ConfigError("logic: lr_final must lie in (0, 1]");
  }
};

/// Comparison pairs flagged for a task: (c5, c4) for handover.
inline std::vector<std::pair<int, int>> default_comparisons(Task task) {
  if (task == Task::handover) return {{1, 0}};
  return {};
}

/// Concept rows and teacher logits, one row per record.
struct LogicData {
  Matrix C;
  Matrix Z;
  std::size_t size() const noexcept { return C.rows(); }
};

inline LogicData make_logic_data(std::span<const TraceRecord> records, const FeatureFn& features) {
  if (records.empty()) throw InvalidArgument("distill_discrete: empty buffer");
  const Vector c0 = features(records.front());
  const std::size_t d = records.front().z.size();
  require(d >= 2, "distill_discrete: teacher logits need at least two actions");
  LogicData out{Matrix(records.size(), c0.size()), Matrix(records.size(), d)};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Vector c = i == 0 ? c0 : features(records[i]);
    require_dim(c.size() == c0.size(), "distill_discrete: concept width changed between records");
    require_dim(records[i].z.size() == d, "distill_discrete: teacher logit width changed between records");
    std::copy(c.begin(), c.end(), out.C.row(i).begin());
    // Teacher logits centred per record.
    double mean = 0.0;
    for (double v : records[i].z) mean += v;
    mean /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) out.Z(i, j) = records[i].z[j] - mean;
  }
  return out;
}

/// Mean tempered KL between teacher and student over rows [begin, end) of the
/// index list; writes the mean gradient when grad is non-null.
inline double logic_kl(const RuleSet& rs, const LogicData& data, std::span<const std::size_t> rows, Vector* grad) {
  require(!rows.empty(), "logic_kl: no rows");
  require_dim(data.C.cols() == rs.num_concepts() && data.Z.cols() == rs.num_heads(),
              "logic_kl: data does not match the ruleset");
  if (grad) grad->assign(rs.parameter_count(), 0.0);
  const Vector alpha = rs.attention();
  Vector dz(rs.num_heads());
  double total = 0.0;
  for (std::size_t r : rows) {
    auto c = data.C.row(r);
    const Vector v = rs.valuate(c);
    const Vector zh = rs.logits_from_valuation(v, alpha);
    total += softmax_kl(data.Z.row(r), zh, rs.kappa(), grad ? std::span<double>(dz) : std::span<double>());
    if (grad) rs.accumulate_gradient(c, v, alpha, dz, *grad);
  }
  const double n = static_cast<double>(rows.size());
  if (grad)
    for (double& g : *grad) g /= n;
  return total / n;
}

inline double logic_kl(const RuleSet& rs, const LogicData& data, Vector* grad = nullptr) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return logic_kl(rs, data, all, grad);
}

namespace detail {

inline double median(std::vector<double> xs) {
  const std::size_t m = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(m), xs.end());
  return xs[m];
}

}  // namespace detail

/// Low/high predicates per concept plus the flagged comparisons, thresholds
/// initialised at the buffer median of each predicate's feature.
inline std::vector<Predicate> build_vocabulary(const LogicData& data, const LogicConfig& cfg) {
  const int K = static_cast<int>(data.C.cols());
  std::vector<Predicate> preds;
  for (int k = 0; k < K; ++k) {
    preds.push_back({PredicateKind::low, k, -1, 0.0, 0.0});
    preds.push_back({PredicateKind::high, k, -1, 0.0, 0.0});
  }
  for (auto [k, k2] : cfg.comparisons) {
    if (k < 0 || k >= K || k2 < 0 || k2 >= K || k == k2) throw ConfigError("logic: comparison pair out of range");
    preds.push_back({PredicateKind::comparison, k, k2, 0.0, 0.0});
  }
  const double rho = softplus_inverse(cfg.init_gain);
  std::vector<double> f(data.size());
  for (auto& q : preds) {
    for (std::size_t i = 0; i < data.size(); ++i) f[i] = q.feature(data.C.row(i));
    q.rho = rho;
    q.bias = -cfg.init_gain * detail::median(f);
  }
  return preds;
}

/// All size-1 and size-2 conjunctions for every head, plus the size-3
/// conjunctions with the highest PMI against the teacher argmax per head.
inline std::vector<Rule> build_rule_pool(const std::vector<Predicate>& preds, const LogicData& data,
                                         const LogicConfig& cfg) {
  const int P = static_cast<int>(preds.size());
  const std::size_t heads = data.Z.cols();
  const std::size_t N = data.size();
  if (P == 0) throw InvalidArgument("distill_discrete: empty candidate pool");

  std::vector<std::vector<char>> fires(static_cast<std::size_t>(P), std::vector<char>(N));
  for (int p = 0; p < P; ++p)
    for (std::size_t i = 0; i < N; ++i) fires[static_cast<std::size_t>(p)][i] = preds[static_cast<std::size_t>(p)].pre_activation(data.C.row(i)) >= 0.0;
  std::vector<std::size_t> label(N);
  std::vector<double> head_count(heads, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    label[i] = argmax(data.Z.row(i));
    head_count[label[i]] += 1.0;
  }

  std::vector<Rule> rules;
  for (std::size_t n = 0; n < heads; ++n) {
    for (int a = 0; a < P; ++a) rules.push_back({{a}, static_cast<int>(n), 0.0});
    for (int a = 0; a < P; ++a)
      for (int b = a + 1; b < P; ++b) rules.push_back({{a, b}, static_cast<int>(n), 0.0});
  }

  struct Triple {
    std::vector<int> preds;
    std::vector<double> hits;  // per head
    double support = 0.0;
  };
  std::vector<Triple> triples;
  for (int a = 0; a < P; ++a)
    for (int b = a + 1; b < P; ++b)
      for (int c = b + 1; c < P; ++c) {
        Triple t{{a, b, c}, std::vector<double>(heads, 0.0), 0.0};
        for (std::size_t i = 0; i < N; ++i)
          if (fires[static_cast<std::size_t>(a)][i] && fires[static_cast<std::size_t>(b)][i] &&
              fires[static_cast<std::size_t>(c)][i]) {
            t.support += 1.0;
            t.hits[label[i]] += 1.0;
          }
        triples.push_back(std::move(t));
      }
  for (std::size_t n = 0; n < heads; ++n) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t t = 0; t < triples.size(); ++t) {
      const Triple& tr = triples[t];
      if (tr.hits[n] == 0.0) continue;
      const double pmi = std::log(tr.hits[n] * static_cast<double>(N) / (tr.support * head_count[n]));
      scored.push_back({pmi, t});
    }
    std::stable_sort(scored.begin(), scored.end(), [&](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return triples[x.second].hits[n] > triples[y.second].hits[n];
    });
    for (std::size_t i = 0; i < scored.size() && i < cfg.top_triples; ++i)
      rules.push_back({triples[scored[i].second].preds, static_cast<int>(n), 0.0});
  }
  return rules;
}

struct LogicFit {
  RuleSet ruleset;
  Vector kl_history;  // per optimizer step (batch KL before the step)
  double final_kl = 0.0;
};

/// Trains predicates and attention by Adam on the mean tempered KL.
inline LogicFit distill_discrete(const LogicData& data, const LogicConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw InvalidArgument("distill_discrete: empty buffer");
  std::vector<Predicate> preds = build_vocabulary(data, cfg);
  std::vector<Rule> rules = build_rule_pool(preds, data, cfg);
  RuleSet rs(data.C.cols(), data.Z.cols(), std::move(preds), std::move(rules), cfg.kappa, cfg.w_th);

  AdamState opt(rs.parameter_count(), AdamConfig{cfg.lr});
  Rng rng = make_rng(cfg.seed, 0xE1);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = cfg.batch == 0 ? data.size() : std::min(cfg.batch, data.size());
  std::size_t cursor = data.size();
  LogicFit fit;
  Vector grad, p;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + bs > data.size()) {
      if (bs < data.size()) shuffle(order, rng);
      cursor = 0;
    }
    std::span<const std::size_t> rows(order.data() + cursor, bs);
    cursor += bs;
    fit.kl_history.push_back(logic_kl(rs, data, rows, &grad));
    const double frac = cfg.steps > 1 ? static_cast<double>(step) / static_cast<double>(cfg.steps - 1) : 0.0;
    opt.set_lr(cfg.lr * (1.0 - frac * (1.0 - cfg.lr_final)));
    p = rs.parameters();
    opt.step(p, grad);
    rs.set_parameters(p);
  }
  fit.final_kl = logic_kl(rs, data);
  fit.ruleset = std::move(rs);
  return fit;
}

inline LogicFit distill_discrete(std::span<const TraceRecord> records, const FeatureFn& features,
                                 const LogicConfig& cfg) {
  return distill_discrete(make_logic_data(records, features), cfg);
}

/// Crisp test for sigmoid(pre) >= 0.5.
inline Test crisp_test(const Predicate& q) {
  const double g = q.gain();
  switch (q.kind) {
    case PredicateKind::low: return {{{q.k, 1.0}}, CmpOp::le, q.bias / g};
    case PredicateKind::high: return {{{q.k, 1.0}}, CmpOp::ge, -q.bias / g};
    case PredicateKind::comparison: return {{{q.k, 1.0}, {q.k2, -1.0}}, CmpOp::ge, -q.bias / g};
  }
  return {};
}

/// Per head keeps the dominant rule and every rule with attention >= w_th.
inline std::vector<std::vector<int>> kept_rules(const RuleSet& rs) {
  const Vector alpha = rs.attention();
  for (double a : alpha)
    if (!std::isfinite(a)) throw NumericError("compile_rules: non-finite attention");
  std::vector<std::vector<int>> kept(rs.num_heads());
  for (std::size_t n = 0; n < rs.num_heads(); ++n) {
    const auto& part = rs.partition(n);
    int best = part.front();
    for (int u : part)
      if (alpha[static_cast<std::size_t>(u)] > alpha[static_cast<std::size_t>(best)]) best = u;
    for (int u : part)
      if (u == best || alpha[static_cast<std::size_t>(u)] >= rs.w_th()) kept[n].push_back(u);
  }
  return kept;
}

inline DecisionTable compile_rules(const RuleSet& rs, std::vector<std::string> symbols,
                                   std::vector<std::string> actions) {
  require(symbols.size() == rs.num_concepts(), "compile_rules: one symbol per concept required");
  require(actions.size() == rs.num_heads(), "compile_rules: one action label per head required");
  const auto kept = kept_rules(rs);
  const Vector alpha = rs.attention();
  std::size_t def = 0;
  for (std::size_t n = 1; n < kept.size(); ++n)
    if (kept[n].size() < kept[def].size()) def = n;

  std::vector<int> emit;
  for (std::size_t n = 0; n < kept.size(); ++n)
    if (n != def) emit.insert(emit.end(), kept[n].begin(), kept[n].end());
  std::stable_sort(emit.begin(), emit.end(), [&](int a, int b) {
    if (alpha[static_cast<std::size_t>(a)] != alpha[static_cast<std::size_t>(b)])
      return alpha[static_cast<std::size_t>(a)] > alpha[static_cast<std::size_t>(b)];
    return a < b;
  });

  DecisionTable t;
  t.symbols = std::move(symbols);
  t.actions = std::move(actions);
  t.default_action = static_cast<int>(def);
  for (int u : emit) {
    const Rule& r = rs.rules()[static_cast<std::size_t>(u)];
    Branch b;
    for (int p : r.predicates) b.tests.push_back(crisp_test(rs.predicates()[static_cast<std::size_t>(p)]));
    b.action = r.head;
    b.provenance = {u, alpha[static_cast<std::size_t>(u)]};
    t.branches.push_back(std::move(b));
  }
  t.validate();
  return t;
}

}  // namespace symran
