#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "symran/core/gradcheck.hpp"
#include "symran/shield/shield.hpp"

using namespace symran;

namespace {

KpmState slicing_state(std::int64_t t = 0) {
  KpmState s;
  s.task = Task::slicing;
  s.t = t;
  return s;
}

KpmState handover_state(std::int64_t since) {
  KpmState s;
  s.task = Task::handover;
  s.since_switch = since;
  return s;
}

void expect_action(const Action& got, const Action& want, double tol = 1e-12) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "entry " << i;
}

Vector trace_concepts(const TraceRecord& r) { return r.c_true; }

std::vector<TraceRecord> synthetic_trace(std::size_t n, double p_violate, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0);
  std::vector<TraceRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].t = static_cast<std::int64_t>(i);
    out[i].c_true = {uniform01(rng), uniform01(rng)};
    out[i].a = {uniform01(rng), 0.5, 0.5};
    out[i].v_thp = bernoulli(rng, p_violate) ? 0.25 : 0.0;
    out[i].v_dly = bernoulli(rng, p_violate / 2) ? 0.5 : 0.0;
  }
  return out;
}

// Separable risk: unsafe iff c1 > 0.5.
RiskData separable(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 3);
  RiskData d;
  for (std::size_t i = 0; i < n; ++i) {
    Vector c{uniform01(rng), uniform01(rng)};
    const int y = c[1] > 0.5 ? 1 : 0;
    d.push(std::move(c), {uniform01(rng)}, y);
  }
  return d;
}

}  // namespace

TEST(Correction, RenormalisesOverfullBudget) {
  const Action out = project_capped_simplex({0.5, 0.4, 0.3}, {});
  expect_action(out, {0.5 / 1.2, 0.4 / 1.2, 0.3 / 1.2});
  EXPECT_NEAR(out[0], 0.41667, 1e-5);
}

TEST(Correction, ClampThenRenormalise) {
  expect_action(project_capped_simplex({-0.1, 0.6, 0.5}, {}), {0.0, 6.0 / 11.0, 5.0 / 11.0});
}

TEST(Correction, FeasibleUnchanged) {
  const auto rules = default_correction_rules(Task::slicing, {0.1, 0.8}, 2);
  const Action a{0.2, 0.3, 0.5};
  EXPECT_EQ(apply_correction_rules(rules, a, slicing_state()), a);
}

TEST(Correction, InfeasibleBoundsRejected) {
  EXPECT_THROW(SliceBounds({0.34, 1.0}).validate(), ConfigError);
  EXPECT_THROW(SliceBounds({0.0, 0.3}).validate(), ConfigError);
  EXPECT_THROW(capped_simplex_rule({0.4, 1.0}), ConfigError);
  EXPECT_NO_THROW(SliceBounds({1.0 / 3.0, 1.0}).validate());
}

TEST(Correction, RandomCandidatesFeasibleAndIdempotent) {
  Rng rng = make_rng(11, 0);
  const KpmState s = slicing_state();
  for (const SliceBounds b : {SliceBounds{0.0, 1.0}, SliceBounds{0.1, 1.0}, SliceBounds{0.1, 0.6},
                              SliceBounds{1.0 / 3.0, 1.0 / 3.0}}) {
    auto rules = default_correction_rules(Task::slicing, b, 2);
    for (int i = 0; i < 10000; ++i) {
      Action a(3);
      for (double& x : a) x = uniform(rng, -0.5, 1.5);
      if (i % 7 == 0) a[i % 3] = std::nan("");
      const Action out = apply_correction_rules(rules, a, s);
      double sum = 0.0;
      for (double x : out) {
        EXPECT_GE(x, b.a_min);
        EXPECT_LE(x, b.a_max);
        sum += x;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
      EXPECT_EQ(apply_correction_rules(rules, out, s), out);
    }
  }
}

TEST(Correction, AllPinnedFallsBackToExactProjection) {
  // Both large entries clamp at a_max, the small one at a_min: sum 1.3.
  const SliceBounds b{0.1, 0.6};
  const Action out = project_capped_simplex({0.9, 0.8, 0.0}, b);
  double sum = 0.0;
  for (double x : out) sum += x;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  for (double x : out) {
    EXPECT_GE(x, b.a_min);
    EXPECT_LE(x, b.a_max);
  }
}

TEST(Correction, PriorityOrder) {
  std::vector<CorrectionRule> rules{
      {"second", 2, [](const Action&, const KpmState&) { return 1.0; },
       [](const Action& a, const KpmState&) { return Action{a[0] * 10.0}; }},
      {"first", 1, [](const Action&, const KpmState&) { return 1.0; },
       [](const Action& a, const KpmState&) { return Action{a[0] + 1.0}; }}};
  sort_rules(rules);
  EXPECT_EQ(apply_correction_rules(rules, {1.0}, slicing_state()), Action{20.0});
}

TEST(Correction, MinDwellBlocksRapidSwitch) {
  const auto rule = min_dwell_rule(2);
  // Switched on the previous step: a switch now would be one step apart.
  EXPECT_GT(rule.violation({1.0}, handover_state(0)), 0.0);
  EXPECT_EQ(rule.project({1.0}, handover_state(0)), Action{0.0});
  EXPECT_LE(rule.violation({1.0}, handover_state(1)), 0.0);
  EXPECT_LE(rule.violation({1.0}, handover_state(never_switched)), 0.0);
  EXPECT_LE(rule.violation({0.0}, handover_state(0)), 0.0);
  EXPECT_THROW(min_dwell_rule(0), ConfigError);
}

TEST(Bank, RetrieveNearestWithLowestIndexTie) {
  SafeBank bank;
  bank.add({{0.0, 0.0}, {0.1, 0.2, 0.7}, 0, 10});
  bank.add({{1.0, 1.0}, {0.7, 0.2, 0.1}, 1, 10});
  bank.add({{0.0, 0.0}, {0.3, 0.3, 0.4}, 2, 10});
  EXPECT_EQ(retrieve_safe(bank, Vector{0.1, 0.0}), bank[0].a);
  EXPECT_EQ(retrieve_safe(bank, Vector{1.0, 1.0}), bank[1].a);
  EXPECT_EQ(nearest_index(bank, Vector{0.5, 0.5}), 0u);
  EXPECT_THROW(retrieve_safe(SafeBank{}, Vector{0.0, 0.0}), InvalidArgument);
}

TEST(Bank, RetrievalMatchesBruteForce) {
  Rng rng = make_rng(5, 0);
  SafeBank bank(5000);
  for (int i = 0; i < 5000; ++i) {
    // Coarse grid so exact ties occur.
    Vector c(4);
    for (double& x : c) x = std::floor(uniform01(rng) * 6.0) / 5.0;
    bank.add({c, {static_cast<double>(i)}, i, 10});
  }
  for (int q = 0; q < 1000; ++q) {
    Vector c(4);
    for (double& x : c) x = uniform01(rng);
    std::size_t best = 0;
    for (std::size_t j = 1; j < bank.size(); ++j) {
      double dj = 0.0, db = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        dj += (bank[j].c[k] - c[k]) * (bank[j].c[k] - c[k]);
        db += (bank[best].c[k] - c[k]) * (bank[best].c[k] - c[k]);
      }
      if (dj < db) best = j;
    }
    ASSERT_EQ(nearest_index(bank, c), best);
  }
}

TEST(Bank, FifoEviction) {
  SafeBank bank(3);
  for (int i = 0; i < 5; ++i) bank.add({{static_cast<double>(i)}, {0.0}, i, 10});
  ASSERT_EQ(bank.size(), 3u);
  EXPECT_EQ(bank[0].verified_at, 2);
  EXPECT_EQ(bank[2].verified_at, 4);
  EXPECT_THROW(bank.add({{1.0, 2.0}, {0.0}, 9, 10}), DimensionError);
}

TEST(Bank, AdmissionReplayReproducesBank) {
  const auto trace = synthetic_trace(3000, 0.02, 9);
  BankConfig cfg;
  const SafeBank bank = admit_from_trace(trace, trace_concepts, cfg);
  ASSERT_GT(bank.size(), 100u);

  SafeBank replay(cfg.capacity);
  for (std::size_t i = 0; i + 10 <= trace.size(); ++i) {
    int bad = 0;
    for (std::size_t k = i; k < i + 10; ++k) bad += (trace[k].v_thp > 0.0 || trace[k].v_dly > 0.0) ? 1 : 0;
    if (bad == 0) replay.add({trace[i].c_true, trace[i].a, trace[i].t, 10});
  }
  EXPECT_EQ(bank, replay);
  EXPECT_EQ(admit_from_trace(trace, trace_concepts, cfg), bank);

  for (const BankEntry& e : bank) EXPECT_EQ(e.window, 10);
}

TEST(Bank, ToleranceAdmitsMore) {
  const auto trace = synthetic_trace(2000, 0.05, 4);
  BankConfig strict, loose;
  loose.tolerance = 2;
  EXPECT_LT(admit_from_trace(trace, trace_concepts, strict).size(),
            admit_from_trace(trace, trace_concepts, loose).size());
  BankConfig bad;
  bad.horizon = 0;
  EXPECT_THROW(admit_from_trace(trace, trace_concepts, bad), ConfigError);
}

TEST(Bank, JsonlRoundTrip) {
  const auto trace = synthetic_trace(500, 0.02, 2);
  const SafeBank bank = admit_from_trace(trace, trace_concepts, {});
  std::stringstream ss;
  write_bank(ss, bank);
  EXPECT_EQ(read_bank(ss), bank);
  std::stringstream broken("{\"c\":[0.1],\"a\":[1],\"verified_at\":0,\"window\":10}\n{\"c\":[0.2]}\n");
  try {
    read_bank(broken, "bank.jsonl");
    FAIL() << "expected ArtifactError";
  } catch (const ArtifactError& e) {
    EXPECT_NE(std::string(e.what()).find("bank.jsonl:2"), std::string::npos);
  }
}

TEST(Risk, WindowLabels) {
  std::vector<TraceRecord> r(5);
  for (std::size_t i = 0; i < r.size(); ++i) r[i].t = static_cast<std::int64_t>(i);
  r[2].v_dly = 0.1;
  EXPECT_EQ(window_labels(r, 2, 0), (std::vector<int>{0, 1, 1, 0, -1}));
  EXPECT_EQ(window_labels(r, 3, 1), (std::vector<int>{0, 0, 0, -1, -1}));
}

TEST(Risk, NearestRankExamples) {
  EXPECT_DOUBLE_EQ(nearest_rank({0.1, 0.2, 0.3, 0.4}, 95.0), 0.4);
  EXPECT_DOUBLE_EQ(nearest_rank({0.4, 0.3, 0.2, 0.1}, 50.0), 0.2);
  EXPECT_DOUBLE_EQ(nearest_rank({0.7, 0.7, 0.7}, 95.0), 0.7);
  EXPECT_DOUBLE_EQ(nearest_rank({0.1, 0.2, 0.3, 0.4}, 100.0), 0.4);
  EXPECT_THROW(nearest_rank({}, 95.0), InvalidArgument);
  EXPECT_THROW(nearest_rank({0.1}, 0.0), InvalidArgument);
}

TEST(Risk, SeparableHeldOutAccuracy) {
  RiskFit fit = train_risk_estimator(separable(2000, 1));
  EXPECT_TRUE(fit.warnings.empty());
  const RiskData test = separable(2000, 2);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i)
    correct += ((fit.estimator.score(test.c[i], test.a[i]) > 0.5) == (test.y[i] == 1)) ? 1 : 0;
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(test.size()), 0.99);
}

TEST(Risk, AllSafeFitsPrior) {
  RiskData d = separable(500, 3);
  for (int& y : d.y) y = 0;
  RiskFit fit = train_risk_estimator(d);
  ASSERT_EQ(fit.warnings.size(), 1u);
  EXPECT_NE(fit.warnings[0].find("single-class"), std::string::npos);
  Rng rng = make_rng(4, 0);
  for (int i = 0; i < 2000; ++i) {
    const Vector c{uniform01(rng), uniform01(rng)};
    EXPECT_LE(fit.estimator.score(c, Vector{uniform01(rng)}), 0.1);
  }
}

TEST(Risk, Errors) {
  EXPECT_THROW(train_risk_estimator(RiskData{}), InvalidArgument);
  RiskData d = separable(10, 1);
  d.y[0] = 2;
  EXPECT_THROW(train_risk_estimator(d), InvalidArgument);
  RiskFit fit = train_risk_estimator(separable(50, 1), {.steps = 5});
  EXPECT_FALSE(fit.estimator.calibrated());
  EXPECT_THROW(fit.estimator.delta(), InvalidArgument);
  EXPECT_THROW(calibrate_threshold(fit.estimator, SafeBank{}, 95.0), InvalidArgument);
}

TEST(Risk, BceGradientMatchesFiniteDifferences) {
  const RiskData d = separable(40, 7);
  for (std::uint64_t point = 0; point < 10; ++point) {
    Rng rng = make_rng(point, 9);
    RiskEstimator r = RiskEstimator::init(2, 1, 8, rng);
    const ValueAndGrad f = [&](std::span<const double> p, Vector* g) {
      RiskEstimator tmp = r;
      tmp.net().set_parameters(p);
      if (g) g->assign(p.size(), 0.0);
      return risk_bce(tmp, d, g);
    };
    EXPECT_LT(finite_diff_check(f, r.net().parameters()), 1e-4) << "point " << point;
  }
}

TEST(Risk, CalibrateOnBankAndJsonRoundTrip) {
  RiskFit fit = train_risk_estimator(separable(400, 1), {.steps = 200});
  SafeBank bank;
  Rng rng = make_rng(2, 0);
  std::vector<double> scores;
  for (int i = 0; i < 20; ++i) {
    bank.add({{uniform01(rng), uniform01(rng)}, {uniform01(rng)}, i, 10});
    scores.push_back(fit.estimator.score(bank[i].c, bank[i].a));
  }
  const double delta = calibrate_threshold(fit.estimator, bank, 95.0);
  std::sort(scores.begin(), scores.end());
  EXPECT_DOUBLE_EQ(delta, scores[18]);
  EXPECT_EQ(RiskEstimator::from_json(fit.estimator.to_json()), fit.estimator);
}

namespace {

// Estimator whose score is sigmoid(logit) with a fixed logit, via a 1-layer net.
RiskEstimator constant_risk(double q, double delta) {
  Layer L{Matrix(1, 4, 0.0), Vector{std::log(q / (1.0 - q))}, Activation::identity};
  RiskEstimator r(FeedForwardNet({L}), 1, 3);
  r.set_delta(delta);
  return r;
}

}  // namespace

TEST(ShieldAction, GateClosedPassesThrough) {
  const auto rules = default_correction_rules(Task::slicing, {}, 2);
  const RiskEstimator r = constant_risk(0.05, 0.4);
  SafeBank bank;
  bank.add({{0.0}, {0.2, 0.2, 0.6}, 0, 10});
  const ShieldDecision d = shield_action(rules, &r, &bank, {0.5, 0.4, 0.3}, Vector{0.0}, slicing_state(7));
  EXPECT_FALSE(d.triggered);
  EXPECT_EQ(d.source, ShieldSource::passthrough);
  expect_action(d.action, {0.5 / 1.2, 0.4 / 1.2, 0.3 / 1.2});
  EXPECT_NEAR(*d.q, 0.05, 1e-12);
  const auto j = decision_to_json(d);
  EXPECT_EQ(j["t"], 7);
  EXPECT_EQ(j["source"], "passthrough");
}

TEST(ShieldAction, GateOpenRetrievesAndCorrects) {
  const auto rules = default_correction_rules(Task::slicing, {0.1, 1.0}, 2);
  const RiskEstimator r = constant_risk(0.9, 0.4);
  SafeBank bank;
  bank.add({{0.0}, {0.2, 0.2, 0.6}, 0, 10});
  bank.add({{1.0}, {0.0, 0.5, 0.5}, 1, 10});
  ShieldDecision d = shield_action(rules, &r, &bank, {0.3, 0.3, 0.4}, Vector{0.1}, slicing_state());
  EXPECT_TRUE(d.triggered);
  EXPECT_EQ(d.source, ShieldSource::retrieval);
  expect_action(d.action, {0.2, 0.2, 0.6});
  // Retrieved actions are re-projected onto the current bounds.
  d = shield_action(rules, &r, &bank, {0.3, 0.3, 0.4}, Vector{0.9}, slicing_state());
  expect_action(d.action, {0.1, 0.45, 0.45});
}

TEST(ShieldAction, EmptyBankWarnsAndPassesThrough) {
  const auto rules = default_correction_rules(Task::slicing, {}, 2);
  const RiskEstimator r = constant_risk(0.9, 0.4);
  const SafeBank bank;
  const ShieldDecision d = shield_action(rules, &r, &bank, {0.3, 0.3, 0.4}, Vector{0.1}, slicing_state());
  EXPECT_TRUE(d.triggered);
  EXPECT_EQ(d.source, ShieldSource::passthrough);
  EXPECT_FALSE(d.warning.empty());
  expect_action(d.action, {0.3, 0.3, 0.4});
}

TEST(ShieldAction, UncalibratedEstimatorRejected) {
  const auto rules = default_correction_rules(Task::slicing, {}, 2);
  Layer L{Matrix(1, 4, 0.0), Vector{0.0}, Activation::identity};
  const RiskEstimator r(FeedForwardNet({L}), 1, 3);
  const SafeBank bank;
  EXPECT_THROW(shield_action(rules, &r, &bank, {0.3, 0.3, 0.4}, Vector{0.1}, slicing_state()), InvalidArgument);
  EXPECT_THROW(Shield(rules, std::make_shared<RiskEstimator>(r), nullptr), InvalidArgument);
  // Correction-only shields need no estimator.
  EXPECT_NO_THROW(Shield(rules, nullptr, nullptr, {.correction = true, .retrieval = false}));
}

TEST(ShieldAction, StageAblations) {
  const auto rules = default_correction_rules(Task::slicing, {0.1, 1.0}, 2);
  auto r = std::make_shared<RiskEstimator>(constant_risk(0.9, 0.4));
  auto bank = std::make_shared<SafeBank>();
  bank->add({{0.0}, {0.2, 0.2, 0.6}, 0, 10});
  const Action a_hat{0.05, 0.05, 0.9};
  const KpmState s = slicing_state();
  const Vector c{0.0};

  Shield off(rules, r, bank, {.correction = false, .retrieval = false});
  EXPECT_EQ(off(a_hat, c, s), a_hat);
  Shield corr(rules, r, bank, {.correction = true, .retrieval = false});
  expect_action(corr(a_hat, c, s), {0.1, 0.1, 0.8});
  Shield full(rules, r, bank);
  full.keep_log(true);
  expect_action(full(a_hat, c, s), {0.2, 0.2, 0.6});
  EXPECT_EQ(full.triggers(), 1u);
  ASSERT_EQ(full.log().size(), 1u);
  EXPECT_EQ(full.log()[0]["source"], "retrieval");
  EXPECT_EQ(full.log()[0]["triggered"], true);
}

TEST(ShieldAction, NoViolationWithoutRetrieval) {
  const SliceBounds b{0.1, 0.7};
  Shield shield(default_correction_rules(Task::slicing, b, 2), nullptr, nullptr,
                {.correction = true, .retrieval = false});
  Rng rng = make_rng(1, 0);
  for (int i = 0; i < 2000; ++i) {
    Action a(3);
    for (double& x : a) x = uniform(rng, -1.0, 2.0);
    const Action out = shield(a, Vector{0.0}, slicing_state());
    for (const auto& rule : shield.rules()) EXPECT_LE(rule.violation(out, slicing_state()), 0.0);
  }
}
