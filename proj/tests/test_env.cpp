#include <gtest/gtest.h>

#include <algorithm>

#include "symran/env/env.hpp"

using namespace symran;

namespace {

EnvConfig slicing_cfg(std::uint64_t seed) {
  EnvConfig c;
  c.seed = seed;
  c.task = Task::slicing;
  return c;
}

EnvConfig handover_cfg(std::uint64_t seed) {
  EnvConfig c = slicing_cfg(seed);
  c.task = Task::handover;
  return c;
}

void check_slicing_invariants(const KpmState& s) {
  ASSERT_GE(s.entities(), 9u);
  ASSERT_LE(s.entities(), 14u);
  ASSERT_TRUE(std::is_sorted(s.roster.begin(), s.roster.end(),
                             [](EntityTag a, EntityTag b) { return slice_index(a) < slice_index(b); }));
  for (std::size_t g = 0; g < s.entities(); ++g) {
    auto r = s.values.row(g);
    EXPECT_GE(r[kpm::cqi], 1.0);
    EXPECT_LE(r[kpm::cqi], 15.0);
    EXPECT_GE(r[kpm::prb_dl], 0.0);
    EXPECT_GE(r[kpm::prb_ul], 0.0);
    EXPECT_GE(r[kpm::dly_dl], 0.0);
    EXPECT_GE(r[kpm::dly_ul], 0.0);
    double sum = 0.0;
    for (int k = 0; k < 3; ++k) {
      EXPECT_GE(r[kpm::slice_prb_embb + k], 0.0);
      sum += r[kpm::slice_prb_embb + k];
    }
    EXPECT_LE(sum, 1.0 + 1e-12);
  }
}

}  // namespace

TEST(EnvReset, SameSeedBitIdentical) {
  Environment a(slicing_cfg(5)), b(slicing_cfg(5));
  EXPECT_EQ(a.state(), b.state());
  Environment h1(handover_cfg(5)), h2(handover_cfg(5));
  EXPECT_EQ(h1.state(), h2.state());
  Environment c(slicing_cfg(6));
  EXPECT_NE(a.state(), c.state());
}

TEST(EnvReset, SlicingRosterWithinRange) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Environment env(slicing_cfg(seed));
    check_slicing_invariants(env.state());
  }
}

TEST(EnvReset, HandoverHasServAndTgt) {
  Environment env(handover_cfg(3));
  ASSERT_EQ(env.state().entities(), 2u);
  EXPECT_EQ(env.state().roster, (std::vector<EntityTag>{EntityTag::serv, EntityTag::tgt}));
}

TEST(EnvStep, StateInvariantsHoldAlongRollout) {
  Environment env(slicing_cfg(9));
  Rng rng = make_rng(1);
  for (int t = 0; t < 500; ++t) {
    const double a0 = uniform01(rng), a1 = uniform01(rng) * (1 - a0);
    auto out = env.step({a0, a1, 1.0 - a0 - a1});
    check_slicing_invariants(out.next);
    EXPECT_EQ(out.next.t, t + 1);
  }
  Environment ho(handover_cfg(9));
  for (int t = 0; t < 500; ++t) {
    auto out = ho.step({static_cast<double>(uniform_index(rng, 2))});
    for (std::size_t g = 0; g < 2; ++g) {
      auto r = out.next.values.row(g);
      for (int m : {kpm::ho_srv_rsrp, kpm::ho_nbr_rsrp}) {
        EXPECT_GE(r[m], -140.0);
        EXPECT_LE(r[m], -40.0);
      }
      EXPECT_GE(r[kpm::ho_dly_dl], 0.0);
      EXPECT_GE(r[kpm::ho_cqi], 1.0);
      EXPECT_LE(r[kpm::ho_cqi], 15.0);
    }
  }
}

TEST(EnvStep, ZeroAllocationStarvesSlices) {
  Environment env(slicing_cfg(2));
  const auto roster = env.state().roster;
  auto out = env.step({1.0, 0.0, 0.0});
  ASSERT_EQ(out.qos.size(), roster.size());
  for (std::size_t g = 0; g < roster.size(); ++g) {
    if (roster[g] == EntityTag::embb) continue;
    EXPECT_EQ(out.qos[g].mu, 0.0);
    EXPECT_TRUE(out.qos[g].thp_violated());
  }
}

TEST(EnvStep, HandoverSwitchAddsInterruption) {
  EnvConfig with = handover_cfg(4), without = handover_cfg(4);
  without.handover.interruption_ms = 0.0;
  Environment a(with), b(without);
  for (int t = 0; t < 5; ++t) {
    a.step({0.0});
    b.step({0.0});
  }
  auto oa = a.step({1.0});
  auto ob = b.step({1.0});
  EXPECT_NEAR(oa.qos[0].omega - ob.qos[0].omega, 30.0, 1e-9);
  EXPECT_NEAR(oa.next.values(1, kpm::ho_dly_dl) - ob.next.values(1, kpm::ho_dly_dl), 30.0, 1e-9);
  EXPECT_EQ(oa.next.since_switch, 0);
  // The spike lasts exactly one step.
  auto na = a.step({0.0});
  auto nb = b.step({0.0});
  EXPECT_EQ(na.qos[0].omega, nb.qos[0].omega);
}

TEST(EnvStep, SameSeedSameActionsIdenticalOutcomes) {
  for (Task task : {Task::slicing, Task::handover}) {
    EnvConfig cfg = slicing_cfg(12);
    cfg.task = task;
    Environment a(cfg), b(cfg);
    for (int t = 0; t < 200; ++t) {
      Action act = task == Task::slicing ? Action{0.5, 0.3, 0.2} : Action{t % 7 == 0 ? 1.0 : 0.0};
      auto oa = a.step(act);
      auto ob = b.step(act);
      ASSERT_EQ(oa.next, ob.next);
      ASSERT_EQ(oa.reward, ob.reward);
      ASSERT_EQ(oa.qos, ob.qos);
      ASSERT_EQ(oa.true_concepts, ob.true_concepts);
    }
  }
}

TEST(EnvStep, ExogenousProcessesIndependentOfActions) {
  Environment a(slicing_cfg(8)), b(slicing_cfg(8));
  for (int t = 0; t < 100; ++t) {
    auto oa = a.step({0.8, 0.1, 0.1});
    auto ob = b.step({0.2, 0.4, 0.4});
    ASSERT_EQ(oa.next.roster, ob.next.roster);
    for (std::size_t g = 0; g < oa.next.entities(); ++g)
      ASSERT_EQ(oa.next.values(g, kpm::cqi), ob.next.values(g, kpm::cqi));
  }
}

TEST(EnvStep, InvalidActionsRejected) {
  Environment env(slicing_cfg(1));
  EXPECT_THROW(env.step({0.5, 0.6, 0.1}), InvalidArgument);
  EXPECT_THROW(env.step({-0.1, 0.5, 0.5}), InvalidArgument);
  EXPECT_THROW(env.step({0.5, 0.5}), InvalidArgument);
  EXPECT_NO_THROW(env.step({0.5, 0.5, 0.0}));
  Environment ho(handover_cfg(1));
  EXPECT_THROW(ho.step({2.0}), InvalidArgument);
}

TEST(EnvStep, ViolationIndicatorsMatchEmittedFields) {
  Environment env(slicing_cfg(3));
  for (int t = 0; t < 200; ++t) {
    auto out = env.step({0.4, 0.3, 0.3});
    double thp = 0, dly = 0;
    for (const auto& q : out.qos) {
      thp += q.mu < q.mu_target;
      dly += q.omega > q.omega_target;
    }
    EXPECT_DOUBLE_EQ(out.v_thp, thp / out.qos.size());
    EXPECT_DOUBLE_EQ(out.v_dly, dly / out.qos.size());
    EXPECT_LE(out.reward, static_cast<double>(out.qos.size()));
  }
  Environment ho(handover_cfg(3));
  for (int t = 0; t < 200; ++t) EXPECT_LE(ho.step({t % 3 == 0 ? 1.0 : 0.0}).reward, 0.0);
}

TEST(EnvConcepts, SlicingConceptsPermutationInvariant) {
  std::vector<detail::SlicingUeLatent> ues{{0, 3.0, 9.0, 20.0}, {0, 5.0, 4.0, 40.0}, {1, 0.5, 7.0, 12.0},
                                           {1, 0.4, 12.0, 3.0}, {2, 0.1, 5.0, 50.0}};
  RewardConfig rc;
  const Vector base = detail::slicing_true_concepts(ues, {0.3, 0.1, 0.05}, rc);
  std::swap(ues[0], ues[1]);
  std::swap(ues[2], ues[3]);
  EXPECT_EQ(detail::slicing_true_concepts(ues, {0.3, 0.1, 0.05}, rc), base);
  for (double c : base) {
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(EnvConcepts, HiddenWhenNotExposed) {
  EnvConfig cfg = slicing_cfg(2);
  cfg.expose_true_concepts = false;
  Environment env(cfg);
  EXPECT_TRUE(env.true_concepts().empty());
  EXPECT_TRUE(env.step({0.4, 0.3, 0.3}).true_concepts.empty());
}

TEST(EnvConfigValidation, RejectsBadFields) {
  EnvConfig cfg = slicing_cfg(1);
  cfg.slicing.ue_max = 65;
  EXPECT_THROW(Environment{cfg}, ConfigError);
  cfg = slicing_cfg(1);
  cfg.slicing.n_prb = 0;
  EXPECT_THROW(Environment{cfg}, ConfigError);
  cfg = slicing_cfg(1);
  cfg.reward.gamma = 1.0;
  EXPECT_THROW(Environment{cfg}, ConfigError);
}

TEST(Reward, SlicingExamples) {
  RewardConfig rc;
  std::vector<QosSample> one{{10.0, 10.0, 5.0, 5.0}};
  EXPECT_DOUBLE_EQ(slicing_reward(std::vector<double>{0.0}, one, rc), 1.0);
  std::vector<QosSample> two{{10.0, 10.0, 5.0, 5.0}, {10.0, 10.0, 5.0, 5.0}};
  EXPECT_DOUBLE_EQ(slicing_reward(std::vector<double>{1.0, 2.0}, two, rc), 0.5);
  EXPECT_DOUBLE_EQ(throughput_penalty(5.0, 10.0), 0.5);
  EXPECT_DOUBLE_EQ(throughput_penalty(15.0, 10.0), 0.0);
  EXPECT_DOUBLE_EQ(delay_penalty(15.0, 10.0), 0.5);
  EXPECT_THROW(throughput_penalty(1.0, 0.0), InvalidArgument);
}

TEST(Reward, HandoverExamples) {
  RewardConfig rc;
  EXPECT_EQ(handover_reward({10.0, 8.0, 30.0, 40.0}, rc), 0.0);
  rc.beta4 = 0.0;
  EXPECT_DOUBLE_EQ(handover_reward({4.0, 8.0, 80.0, 40.0}, rc), -0.5);
  rc.beta3 = 0.0;
  EXPECT_EQ(handover_reward({0.0, 8.0, 500.0, 40.0}, rc), 0.0);
}

TEST(Reward, ViolationRates) {
  std::vector<QosSample> ok(4, QosSample{5, 1, 1, 5});
  EXPECT_EQ(violation_rates(ok), std::make_pair(0.0, 0.0));
  auto half = ok;
  half[0].mu = 0.5;
  half[2].mu = 0.2;
  EXPECT_EQ(violation_rates(half), std::make_pair(0.5, 0.0));
  std::vector<QosSample> bad(3, QosSample{0.5, 1, 10, 5});
  EXPECT_EQ(violation_rates(bad), std::make_pair(1.0, 1.0));
  EXPECT_THROW(violation_rates(std::vector<QosSample>{}), InvalidArgument);
}
