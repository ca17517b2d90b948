#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "symran/core/adam.hpp"
#include "symran/core/errors.hpp"
#include "symran/dsr/constants.hpp"
#include "symran/dsr/generator.hpp"
#include "symran/teacher/trace.hpp"

namespace symran {

struct DsrResult {
  ExpressionTree best;
  double best_j = 0.0;     // on the search subsample
  double train_mse = 0.0;  // on the full dataset after the final constant refit
  double train_j = 0.0;
  Vector j_history;        // best-ever J after each iteration
  std::size_t evaluations = 0;
  std::size_t iterations = 0;
};

/// Evenly spaced rows of d, at most n of them.
inline Dataset subsample(const Dataset& d, std::size_t n) {
  if (n == 0 || d.size() <= n) return d;
  Dataset out{Matrix(n, d.X.cols()), Vector(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = i * d.size() / n;
    auto from = d.X.row(src);
    auto to = out.X.row(i);
    std::copy(from.begin(), from.end(), to.begin());
    out.y[i] = d.y[src];
  }
  return out;
}

/// Samples one batch of trees from a generator (pure sampling, no fitting).
inline std::vector<ExpressionTree> sample_expressions(const Generator& gen, std::size_t n, Rng& rng) {
  std::vector<ExpressionTree> out;
  for (const auto& e : gen.sample(n, rng)) out.push_back(gen.to_tree(e.tokens));
  return out;
}

/// Risk-seeking policy-gradient search over expression trees on one target.
inline DsrResult dsr_search(const Dataset& data, const DsrConfig& cfg) {
  cfg.validate();
  data.validate();
  require(data.X.cols() >= 1, "dsr: need at least one input variable");
  const Dataset fit_data = subsample(data, cfg.max_fit_samples);

  Generator gen(data.X.cols(), cfg);
  AdamState opt(gen.parameter_count(), AdamConfig{cfg.lr});
  Rng rng = make_rng(cfg.seed, 0xD6);

  struct Scored {
    double j;
    ExpressionTree tree;
  };
  std::map<std::string, Scored> cache;
  DsrResult res;
  bool have_best = false;
  std::string best_key;

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    if (res.evaluations + cfg.batch > cfg.max_evaluations) break;
    auto batch = gen.sample(cfg.batch, rng);
    res.evaluations += batch.size();
    std::vector<double> reward(batch.size());
    std::vector<std::string> keys(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      keys[i] = gen.token_string(batch[i].tokens);
      auto it = cache.find(keys[i]);
      if (it == cache.end()) {
        ConstantFit f = fit_constants(gen.to_tree(batch[i].tokens), fit_data, cfg.const_steps);
        it = cache.emplace(keys[i], Scored{fidelity_reward_from_mse(f.mse), std::move(f.tree)}).first;
      }
      reward[i] = it->second.j;
      const bool better = !have_best || reward[i] > res.best_j ||
                          (reward[i] == res.best_j &&
                           (it->second.tree.size() < res.best.size() ||
                            (it->second.tree.size() == res.best.size() && keys[i] < best_key)));
      if (better) {
        res.best = it->second.tree;
        res.best_j = reward[i];
        best_key = keys[i];
        have_best = true;
      }
    }
    ++res.iterations;
    res.j_history.push_back(res.best_j);

    // Top-epsilon selection with a stable tie-break on the token sequence.
    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (reward[a] != reward[b]) return reward[a] > reward[b];
      return keys[a] < keys[b];
    });
    const std::size_t n_top =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.epsilon * static_cast<double>(batch.size()))));
    const double threshold = reward[order[n_top - 1]];
    Vector grad(gen.parameter_count(), 0.0);
    std::size_t used = 0;
    for (std::size_t r = 0; r < order.size() && reward[order[r]] >= threshold; ++r) ++used;
    for (std::size_t r = 0; r < used; ++r) {
      const std::size_t i = order[r];
      gen.accumulate_gradient(batch[i], (reward[i] - threshold) / static_cast<double>(used),
                              cfg.entropy_weight / static_cast<double>(used), grad);
    }
    Vector p = gen.parameters();
    opt.step(p, grad);
    gen.set_parameters(p);
  }

  if (!have_best) {
    // Budget too small for one batch: score a single batch anyway.
    DsrConfig one = cfg;
    one.iterations = 1;
    one.max_evaluations = cfg.batch;
    return dsr_search(data, one);
  }
  const ConstantFit refit = fit_constants(res.best, data, std::max<std::size_t>(cfg.const_steps, 100));
  res.best = refit.tree;
  res.train_mse = refit.mse;
  res.train_j = fidelity_reward_from_mse(refit.mse);
  return res;
}

/// Maps a trace record to the student's input vector (concepts or raw features).
using FeatureFn = std::function<Vector(const TraceRecord&)>;

inline Dataset make_dataset(std::span<const TraceRecord> records, const FeatureFn& features, std::size_t dim) {
  if (records.empty()) throw InvalidArgument("distill: empty buffer");
  const Vector first = features(records.front());
  Dataset d{Matrix(records.size(), first.size()), Vector(records.size())};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Vector f = i == 0 ? first : features(records[i]);
    require_dim(f.size() == first.size(), "distill: feature width changed between records");
    if (dim >= records[i].z.size()) throw DimensionError("distill: action dimension out of range");
    auto row = d.X.row(i);
    std::copy(f.begin(), f.end(), row.begin());
    d.y[i] = records[i].z[dim];
  }
  return d;
}

/// One expression per action dimension, fitted to the teacher's z_i.
inline DsrResult distill_continuous(std::span<const TraceRecord> records, const FeatureFn& features,
                                    std::size_t dim, const DsrConfig& cfg) {
  return dsr_search(make_dataset(records, features, dim), cfg);
}

}  // namespace symran
