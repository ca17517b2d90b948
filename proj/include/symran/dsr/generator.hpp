#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/core/rng.hpp"
#include "symran/core/tensor.hpp"
#include "symran/dsr/expression.hpp"

namespace symran {

struct DsrConfig {
  int d_max = 6;
  std::size_t batch = 500;
  std::size_t iterations = 400;
  std::size_t max_evaluations = 200000;  // candidate trees scored, cache hits included
  double epsilon = 0.05;
  std::size_t const_steps = 50;
  std::size_t max_fit_samples = 1000;
  std::size_t hidden = 32;
  double lr = 5e-3;
  double entropy_weight = 0.005;
  std::vector<Op> operators{Op::add, Op::sub, Op::mul, Op::div, Op::log, Op::exp};
  bool constants = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (d_max < 2) throw ConfigError("dsr: d_max must be at least 2");
    if (!(epsilon > 0.0 && epsilon <= 0.5)) throw ConfigError("dsr: epsilon must lie in (0, 0.5]");
    if (batch < 10) throw ConfigError("dsr: batch must be at least 10");
    if (hidden == 0) throw ConfigError("dsr: hidden width must be positive");
    if (!(lr > 0.0)) throw ConfigError("dsr: lr must be positive");
    for (Op op : operators)
      if (arity(op) == 0) throw ConfigError("dsr: operator list may only hold operators");
  }
};

/// One sampled pre-order token sequence with the generator inputs and masks
/// seen at every step (needed to replay it for the policy gradient).
struct SampledExpression {
  std::vector<int> tokens;
  std::vector<int> parent;   // token id, or the "none" id
  std::vector<int> sibling;  // token id, or the "none" id
  std::vector<std::vector<char>> feasible;
  std::vector<Vector> probs;  // filled only when requested
  double log_prob = 0.0;
};

/// Recurrent categorical model over the token alphabet
///   [+, -, *, /, log, exp, c0 .. c{K-1}, const].
/// Each step sees one-hot parent and sibling tokens; infeasible tokens get
/// probability exactly 0.
class Generator {
 public:
  Generator(std::size_t K, const DsrConfig& cfg) : K_(K), cfg_(cfg) {
    cfg_.validate();
    require(K >= 1, "Generator: need at least one variable");
    T_ = 6 + K_ + 1;
    I_ = 2 * (T_ + 1);
    H_ = cfg_.hidden;
    params_.assign(parameter_count(), 0.0);
    Rng rng = make_rng(cfg_.seed, 0xD5);
    auto fill = [&](std::size_t off, std::size_t rows, std::size_t cols) {
      const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (std::size_t i = 0; i < rows * cols; ++i) params_[off + i] = uniform(rng, -lim, lim);
    };
    fill(off_wx(), H_, I_);
    fill(off_wh(), H_, H_);
    fill(off_wo(), T_, H_);
  }

  std::size_t variables() const noexcept { return K_; }
  std::size_t token_count() const noexcept { return T_; }
  int none_token() const noexcept { return static_cast<int>(T_); }
  int const_token() const noexcept { return static_cast<int>(T_ - 1); }
  bool is_op(int tok) const noexcept { return tok < 6; }
  bool is_var(int tok) const noexcept { return tok >= 6 && tok < static_cast<int>(6 + K_); }
  const DsrConfig& config() const noexcept { return cfg_; }

  std::size_t parameter_count() const noexcept { return H_ * I_ + H_ * H_ + H_ + T_ * H_ + T_; }
  const Vector& parameters() const noexcept { return params_; }
  void set_parameters(std::span<const double> p) {
    require_dim(p.size() == params_.size(), "Generator::set_parameters: size mismatch");
    params_.assign(p.begin(), p.end());
  }

  static Op token_op(int tok) { return static_cast<Op>(tok); }

  ExpressionTree to_tree(const std::vector<int>& tokens) const {
    std::vector<Node> nodes;
    nodes.reserve(tokens.size());
    for (int t : tokens) {
      if (is_op(t)) nodes.push_back({token_op(t), 0, 0.0});
      else if (is_var(t)) nodes.push_back({Op::var, t - 6, 0.0});
      else nodes.push_back({Op::cst, 0, 1.0});
    }
    return ExpressionTree(std::move(nodes));
  }

  std::string token_string(const std::vector<int>& tokens) const {
    std::string s;
    for (int t : tokens) {
      if (!s.empty()) s += ' ';
      if (is_op(t)) s += op_symbol(token_op(t));
      else if (is_var(t)) s += "c" + std::to_string(t - 6);
      else s += "k";
    }
    return s;
  }

  std::vector<SampledExpression> sample(std::size_t n, Rng& rng, bool record_probs = false) const {
    std::vector<SampledExpression> out;
    out.reserve(n);
    Vector h(H_), a(H_), logits(T_), p(T_);
    for (std::size_t s = 0; s < n; ++s) {
      SampledExpression e;
      std::fill(h.begin(), h.end(), 0.0);
      // Open slots, top = next to fill: (parent position or -1, child index, depth).
      struct Slot {
        int parent_pos;
        int child;
        int depth;
      };
      // A second child's sibling is the first child's root, tokens[parent_pos + 1],
      // which is known by the time the slot is popped.
      std::vector<Slot> stack{{-1, 0, 1}};
      while (!stack.empty()) {
        const Slot slot = stack.back();
        stack.pop_back();
        const int parent = slot.parent_pos < 0 ? none_token() : e.tokens[static_cast<std::size_t>(slot.parent_pos)];
        const int sibling = slot.child == 1 ? e.tokens[static_cast<std::size_t>(slot.parent_pos) + 1] : none_token();
        std::vector<char> ok = feasible(parent, sibling, slot.child, slot.depth);
        step_forward(parent, sibling, h, a, logits);
        masked_softmax(logits, ok, p);
        const int tok = draw(p, rng);
        e.log_prob += std::log(p[static_cast<std::size_t>(tok)]);
        e.tokens.push_back(tok);
        e.parent.push_back(parent);
        e.sibling.push_back(sibling);
        e.feasible.push_back(std::move(ok));
        if (record_probs) e.probs.push_back(p);
        const int pos = static_cast<int>(e.tokens.size()) - 1;
        if (is_op(tok)) {
          const int ar = arity(token_op(tok));
          for (int c = ar - 1; c >= 0; --c) stack.push_back({pos, c, slot.depth + 1});
        }
      }
      out.push_back(std::move(e));
    }
    return out;
  }

  /// Adds the gradient of  weight * (-log p(tau)) - entropy_weight * sum_t H_t
  /// for one sampled sequence into grad.
  void accumulate_gradient(const SampledExpression& e, double weight, double entropy_weight,
                           std::span<double> grad) const {
    require_dim(grad.size() == params_.size(), "Generator: gradient size mismatch");
    const std::size_t L = e.tokens.size();
    std::vector<Vector> hs(L + 1, Vector(H_, 0.0));
    std::vector<Vector> ps(L, Vector(T_));
    Vector a(H_), logits(T_);
    for (std::size_t t = 0; t < L; ++t) {
      hs[t + 1] = hs[t];
      step_forward(e.parent[t], e.sibling[t], hs[t + 1], a, logits);
      masked_softmax(logits, e.feasible[t], ps[t]);
    }
    Vector dh_next(H_, 0.0), dl(T_), dh(H_), da(H_);
    const double* Wo = params_.data() + off_wo();
    const double* Wh = params_.data() + off_wh();
    for (std::size_t t = L; t-- > 0;) {
      const Vector& p = ps[t];
      double ent = 0.0;
      for (std::size_t j = 0; j < T_; ++j)
        if (p[j] > 0.0) ent -= p[j] * std::log(p[j]);
      for (std::size_t j = 0; j < T_; ++j) {
        if (!e.feasible[t][j]) {
          dl[j] = 0.0;
          continue;
        }
        const double lp = p[j] > 0.0 ? std::log(p[j]) : 0.0;
        dl[j] = weight * (p[j] - (static_cast<int>(j) == e.tokens[t] ? 1.0 : 0.0)) +
                entropy_weight * p[j] * (lp + ent);
      }
      const Vector& h = hs[t + 1];
      const Vector& hprev = hs[t];
      double* gWo = grad.data() + off_wo();
      double* gbo = grad.data() + off_bo();
      for (std::size_t j = 0; j < T_; ++j) {
        if (dl[j] == 0.0) continue;
        for (std::size_t i = 0; i < H_; ++i) gWo[j * H_ + i] += dl[j] * h[i];
        gbo[j] += dl[j];
      }
      for (std::size_t i = 0; i < H_; ++i) {
        double v = dh_next[i];
        for (std::size_t j = 0; j < T_; ++j) v += Wo[j * H_ + i] * dl[j];
        dh[i] = v;
        da[i] = v * (1.0 - h[i] * h[i]);
      }
      double* gWx = grad.data() + off_wx();
      double* gWh = grad.data() + off_wh();
      double* gbh = grad.data() + off_bh();
      const std::size_t cp = static_cast<std::size_t>(e.parent[t]);
      const std::size_t cs = T_ + 1 + static_cast<std::size_t>(e.sibling[t]);
      for (std::size_t i = 0; i < H_; ++i) {
        gWx[i * I_ + cp] += da[i];
        gWx[i * I_ + cs] += da[i];
        gbh[i] += da[i];
        for (std::size_t k = 0; k < H_; ++k) gWh[i * H_ + k] += da[i] * hprev[k];
      }
      for (std::size_t k = 0; k < H_; ++k) {
        double v = 0.0;
        for (std::size_t i = 0; i < H_; ++i) v += Wh[i * H_ + k] * da[i];
        dh_next[k] = v;
      }
    }
  }

  /// log p(tau) of a recorded sequence under the current parameters.
  double log_prob(const SampledExpression& e) const { return objective(e, -1.0, 0.0); }

  /// weight * (-log p(tau)) - entropy_weight * sum_t H_t, the quantity whose
  /// gradient accumulate_gradient adds.
  double objective(const SampledExpression& e, double weight, double entropy_weight) const {
    Vector h(H_, 0.0), a(H_), logits(T_), p(T_);
    double total = 0.0;
    for (std::size_t t = 0; t < e.tokens.size(); ++t) {
      step_forward(e.parent[t], e.sibling[t], h, a, logits);
      masked_softmax(logits, e.feasible[t], p);
      double ent = 0.0;
      for (double q : p)
        if (q > 0.0) ent -= q * std::log(q);
      total += -weight * std::log(p[static_cast<std::size_t>(e.tokens[t])]) - entropy_weight * ent;
    }
    return total;
  }

  /// Which tokens may fill a slot: depth bound, operator alphabet, and priors
  /// (no operator over constants only; no log directly over exp or vice versa).
  std::vector<char> feasible(int parent, int sibling, int child, int depth) const {
    std::vector<char> ok(T_, 0);
    if (depth < cfg_.d_max)
      for (Op op : cfg_.operators) ok[static_cast<std::size_t>(op)] = 1;
    for (std::size_t k = 0; k < K_; ++k) ok[6 + k] = 1;
    bool allow_const = cfg_.constants;
    if (parent != none_token() && is_op(parent)) {
      const Op pop = token_op(parent);
      if (arity(pop) == 1) allow_const = false;
      if (pop == Op::log) ok[static_cast<std::size_t>(Op::exp)] = 0;
      if (pop == Op::exp) ok[static_cast<std::size_t>(Op::log)] = 0;
      if (child == 1 && sibling == const_token()) allow_const = false;
    }
    ok[static_cast<std::size_t>(const_token())] = allow_const ? 1 : 0;
    return ok;
  }

 private:
  std::size_t K_, T_, I_, H_;
  DsrConfig cfg_;
  Vector params_;

  std::size_t off_wx() const noexcept { return 0; }
  std::size_t off_wh() const noexcept { return H_ * I_; }
  std::size_t off_bh() const noexcept { return H_ * I_ + H_ * H_; }
  std::size_t off_wo() const noexcept { return off_bh() + H_; }
  std::size_t off_bo() const noexcept { return off_wo() + T_ * H_; }

  void step_forward(int parent, int sibling, Vector& h, Vector& a, Vector& logits) const {
    const double* Wx = params_.data() + off_wx();
    const double* Wh = params_.data() + off_wh();
    const double* bh = params_.data() + off_bh();
    const double* Wo = params_.data() + off_wo();
    const double* bo = params_.data() + off_bo();
    const std::size_t cp = static_cast<std::size_t>(parent);
    const std::size_t cs = T_ + 1 + static_cast<std::size_t>(sibling);
    for (std::size_t i = 0; i < H_; ++i) {
      double v = bh[i] + Wx[i * I_ + cp] + Wx[i * I_ + cs];
      const double* row = Wh + i * H_;
      for (std::size_t k = 0; k < H_; ++k) v += row[k] * h[k];
      a[i] = v;
    }
    for (std::size_t i = 0; i < H_; ++i) h[i] = std::tanh(a[i]);
    for (std::size_t j = 0; j < T_; ++j) {
      double v = bo[j];
      const double* row = Wo + j * H_;
      for (std::size_t i = 0; i < H_; ++i) v += row[i] * h[i];
      logits[j] = v;
    }
  }

  static void masked_softmax(const Vector& logits, const std::vector<char>& ok, Vector& p) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < logits.size(); ++j)
      if (ok[j]) mx = std::max(mx, logits[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
      p[j] = ok[j] ? std::exp(logits[j] - mx) : 0.0;
      z += p[j];
    }
    for (double& v : p) v /= z;
  }

  static int draw(const Vector& p, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    int last = -1;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (p[j] <= 0.0) continue;
      acc += p[j];
      last = static_cast<int>(j);
      if (u < acc) return last;
    }
    return last;
  }
};

}  // namespace symran
