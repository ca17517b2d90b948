#include <gtest/gtest.h>

#include <cmath>

#include "symran/core/gradcheck.hpp"
#include "symran/dsr/constants.hpp"
#include "symran/dsr/expression.hpp"
#include "symran/dsr/generator.hpp"
#include "symran/dsr/search.hpp"
#include "symran/teacher/teacher.hpp"

using namespace symran;

namespace {

Dataset make_data(std::size_t n, std::size_t K, std::uint64_t seed, double (*f)(const double*)) {
  Rng rng = make_rng(seed, 0);
  Dataset d{Matrix(n, K), Vector(n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < K; ++k) d.X(i, k) = uniform01(rng);
    d.y[i] = f(&d.X(i, 0));
  }
  return d;
}

DsrConfig small_config(std::uint64_t seed = 1) {
  DsrConfig c;
  c.batch = 100;
  c.iterations = 20;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(EvalExpression, WorkedExamples) {
  EXPECT_DOUBLE_EQ(ExpressionTree::parse("(+ c0 c1)").eval(Vector{0.2, 0.3, 0.9}), 0.5);
  EXPECT_EQ(ExpressionTree::parse(scripted_urllc).eval(Vector{0.4, 0.0, 0.7, 0.0}), 0.0);
  EXPECT_DOUBLE_EQ(ExpressionTree::parse("(/ 1 c2)").eval(Vector{0.0, 0.0, 0.0}), 1e6);
}

TEST(EvalExpression, TotalAndFiniteOnUnitCube) {
  DsrConfig cfg;
  cfg.seed = 4;
  Generator gen(4, cfg);
  Rng rng = make_rng(5, 0);
  Rng pts = make_rng(6, 0);
  for (const auto& t : sample_expressions(gen, 300, rng)) {
    for (int i = 0; i < 20; ++i) {
      Vector c(4);
      for (double& v : c) v = uniform01(pts);
      EXPECT_TRUE(std::isfinite(t.eval(c))) << t.to_prefix();
    }
  }
}

TEST(FidelityReward, MatchesInverseOnePlusMse) {
  EXPECT_EQ(fidelity_reward_from_mse(0.0), 1.0);
  EXPECT_EQ(fidelity_reward_from_mse(1.0), 0.5);
  EXPECT_EQ(fidelity_reward_from_mse(3.0), 0.25);
  double prev = 2.0;
  for (double m : {0.0, 1e-9, 1e-3, 0.5, 10.0, 1e6}) {
    const double j = fidelity_reward_from_mse(m);
    EXPECT_LT(j, prev);
    EXPECT_GT(j, 0.0);
    prev = j;
  }
  Dataset empty;
  EXPECT_THROW(fidelity_reward(ExpressionTree::parse("c0"), empty), InvalidArgument);
}

TEST(FitConstants, RecoversLinearCoefficient) {
  const Dataset d = make_data(200, 1, 1, [](const double* c) { return 2.0 * c[0]; });
  const auto fit = fit_constants(ExpressionTree::parse("(* 1 c0)"), d);
  EXPECT_NEAR(fit.tree.constants()[0], 2.0, 1e-6);
  EXPECT_LE(fit.mse, 1e-8);
}

TEST(FitConstants, NoConstantsUnchanged) {
  const Dataset d = make_data(50, 2, 2, [](const double* c) { return c[0] * c[1]; });
  const auto t = ExpressionTree::parse("(* c0 c1)");
  const auto fit = fit_constants(t, d);
  EXPECT_EQ(fit.tree, t);
  EXPECT_LE(fit.mse, 1e-30);
}

TEST(FitConstants, NoiseFloorOfLeastSquares) {
  Dataset d = make_data(4000, 2, 3, [](const double* c) { return 1.5 * c[0] - 0.7 * c[1] + 0.2; });
  Rng rng = make_rng(3, 1);
  const double sigma = 0.01;
  for (double& y : d.y) y += sigma * normal(rng);
  const auto fit = fit_constants(ExpressionTree::parse("(+ (- (* 1 c0) (* 1 c1)) 1)"), d);
  EXPECT_GE(fit.mse, sigma * sigma / 2);
  EXPECT_LE(fit.mse, 2 * sigma * sigma);
}

TEST(FitConstants, NeverIncreasesMse) {
  const Dataset d = make_data(300, 3, 4, [](const double* c) { return std::exp(c[0]) / (0.3 + c[1]) + c[2]; });
  DsrConfig cfg;
  cfg.seed = 9;
  Generator gen(3, cfg);
  Rng rng = make_rng(7, 0);
  for (const auto& t : sample_expressions(gen, 200, rng)) {
    const double before = expression_mse(t, d);
    const auto fit = fit_constants(t, d);
    EXPECT_LE(fit.mse, before) << t.to_prefix();
  }
}

TEST(FitConstants, GradientMatchesFiniteDifferences) {
  const Dataset d = make_data(100, 2, 5, [](const double* c) { return std::log(1 + c[0]) + 0.3 * c[1] * c[0]; });
  const auto t = ExpressionTree::parse("(+ (* 1.1 (log (+ 0.9 c0))) (* (- c1 0.4) (/ c0 (+ 2 c1))))");
  Rng rng = make_rng(5, 1);
  for (int point = 0; point < 10; ++point) {
    Vector p(t.num_constants());
    for (double& v : p) v = uniform(rng, 0.5, 2.0);
    ValueAndGrad f = [&](std::span<const double> q, Vector* g) { return constant_mse(t, q, d, g); };
    EXPECT_LT(finite_diff_check(f, p), 1e-4);
  }
}

TEST(Generator, LeavesOnlyAlphabetGivesSingleLeaves) {
  DsrConfig cfg;
  cfg.operators.clear();
  Generator gen(3, cfg);
  Rng rng = make_rng(1, 0);
  for (const auto& t : sample_expressions(gen, 100, rng)) EXPECT_EQ(t.size(), 1u);
}

TEST(Generator, EmptyBatchAndSeededDeterminism) {
  DsrConfig cfg;
  Generator gen(4, cfg);
  Rng r0 = make_rng(2, 0);
  EXPECT_TRUE(sample_expressions(gen, 0, r0).empty());
  Rng r1 = make_rng(3, 0), r2 = make_rng(3, 0);
  const auto a = sample_expressions(gen, 50, r1), b = sample_expressions(gen, 50, r2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Generator, DepthBoundMaskingAndPriors) {
  for (int d_max : {2, 3, 6}) {
    DsrConfig cfg;
    cfg.d_max = d_max;
    cfg.seed = static_cast<std::uint64_t>(d_max);
    Generator gen(4, cfg);
    Rng rng = make_rng(11, 0);
    for (const auto& e : gen.sample(300, rng, true)) {
      const ExpressionTree t = gen.to_tree(e.tokens);
      EXPECT_LE(t.depth(), d_max);
      for (std::size_t s = 0; s < e.tokens.size(); ++s) {
        double total = 0.0;
        for (std::size_t j = 0; j < gen.token_count(); ++j) {
          if (!e.feasible[s][j]) EXPECT_EQ(e.probs[s][j], 0.0);
          total += e.probs[s][j];
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
      const auto& n = t.nodes();
      for (std::size_t i = 0; i < n.size(); ++i) {
        if (n[i].op == Op::log) EXPECT_NE(n[i + 1].op, Op::exp);
        if (n[i].op == Op::exp) EXPECT_NE(n[i + 1].op, Op::log);
        if (arity(n[i].op) == 1) EXPECT_NE(n[i + 1].op, Op::cst);
        if (arity(n[i].op) == 2)
          EXPECT_FALSE(n[i + 1].op == Op::cst && n[t.second_child(i)].op == Op::cst);
      }
    }
  }
}

TEST(Generator, PolicyGradientMatchesFiniteDifferences) {
  DsrConfig cfg;
  cfg.hidden = 6;
  cfg.seed = 13;
  Generator gen(2, cfg);
  Rng rng = make_rng(13, 0);
  const auto samples = gen.sample(5, rng);
  for (const auto& e : samples) {
    ValueAndGrad f = [&](std::span<const double> q, Vector* g) {
      Generator gg = gen;
      gg.set_parameters(q);
      if (g) {
        g->assign(q.size(), 0.0);
        gg.accumulate_gradient(e, 0.7, 0.05, *g);
      }
      return gg.objective(e, 0.7, 0.05);
    };
    EXPECT_LT(finite_diff_check(f, gen.parameters()), 1e-4);
  }
}

TEST(Serialization, PrefixRoundTripEvaluatesIdentically) {
  const Dataset d = make_data(200, 3, 8, [](const double* c) { return c[0] * c[1] - c[2]; });
  DsrConfig cfg;
  cfg.seed = 21;
  Generator gen(3, cfg);
  Rng rng = make_rng(21, 0);
  Rng pts = make_rng(22, 0);
  for (const auto& raw : sample_expressions(gen, 20, rng)) {
    const ExpressionTree t = fit_constants(raw, d).tree;
    const ExpressionTree back = ExpressionTree::parse(t.to_prefix());
    for (int i = 0; i < 1000; ++i) {
      Vector c{uniform01(pts), uniform01(pts), uniform01(pts)};
      EXPECT_EQ(back.eval(c), t.eval(c)) << t.to_prefix();
    }
  }
}

TEST(DsrSearch, ConstantTargetGivesSingleConstant) {
  const Dataset d = make_data(300, 3, 9, [](const double*) { return 0.7; });
  const DsrResult r = dsr_search(d, small_config());
  ASSERT_EQ(r.best.size(), 1u) << r.best.to_prefix();
  EXPECT_EQ(r.best.nodes()[0].op, Op::cst);
  EXPECT_NEAR(r.best.nodes()[0].value, 0.7, 1e-3);
}

TEST(DsrSearch, MinimalBudgetDoesNotCrash) {
  const Dataset d = make_data(100, 2, 10, [](const double* c) { return c[0] + c[1]; });
  DsrConfig cfg;
  cfg.batch = 10;
  cfg.iterations = 1;
  const DsrResult r = dsr_search(d, cfg);
  EXPECT_EQ(r.iterations, 1u);
  EXPECT_EQ(r.evaluations, 10u);
  EXPECT_GT(r.best_j, 0.0);
}

TEST(DsrSearch, BestEverIsMonotoneAndWithinDepth) {
  const Dataset d = make_data(300, 2, 11, [](const double* c) { return c[0] * c[0] + 0.5 * c[1]; });
  DsrConfig cfg = small_config(3);
  cfg.d_max = 4;
  const DsrResult r = dsr_search(d, cfg);
  for (std::size_t i = 1; i < r.j_history.size(); ++i) EXPECT_GE(r.j_history[i], r.j_history[i - 1]);
  EXPECT_LE(r.best.depth(), 4);
  EXPECT_GE(r.train_j, r.best_j - 1e-3);
}

TEST(DsrSearch, RespectsEvaluationBudget) {
  const Dataset d = make_data(100, 2, 12, [](const double* c) { return c[0] - c[1]; });
  DsrConfig cfg = small_config();
  cfg.max_evaluations = 450;
  const DsrResult r = dsr_search(d, cfg);
  EXPECT_LE(r.evaluations, 450u);
  EXPECT_EQ(r.iterations, 4u);
}

TEST(DsrSearch, FindsSimpleProduct) {
  const Dataset d = make_data(400, 3, 13, [](const double* c) { return c[0] * c[2]; });
  DsrConfig cfg = small_config(5);
  cfg.iterations = 30;
  const DsrResult r = dsr_search(d, cfg);
  EXPECT_GE(r.train_j, 0.9999) << r.best.to_prefix();
}

TEST(DsrConfig, Validation) {
  DsrConfig c;
  c.d_max = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epsilon = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}
