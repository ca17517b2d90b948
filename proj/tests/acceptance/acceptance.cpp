// End-to-end acceptance gate. Every criterion prints one PASS/FAIL line; the
// binary exits non-zero if any criterion fails.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "symran/concept/ig.hpp"
#include "symran/core/gradcheck.hpp"
#include "symran/logic/distill.hpp"
#include "symran/pipeline/stages.hpp"

using namespace symran;
namespace fs = std::filesystem;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::map<int, bool>& verdicts() {
  static std::map<int, bool> v;
  return v;
}

void criterion(int id, const std::string& title, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  verdicts()[id] = o.pass;
  std::printf("%s  %2d  %s: %s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str());
  std::fflush(stdout);
  EXPECT_TRUE(o.pass) << title << ": " << o.detail;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "symran_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// --- example-config pipeline runs, shared across criteria --------------------

struct PipelineRun {
  RunConfig cfg;
  fs::path dir;
  double seconds = 0.0;
  nlohmann::json eval;
  nlohmann::json latency;

  nlohmann::json cell(const std::string& name) const {
    for (const auto& c : eval.at("cells"))
      if (c.at("cell") == name) return c;
    throw std::runtime_error("eval.json has no cell " + name);
  }
};

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

PipelineRun run_pipeline(const std::string& name, const std::string& out, const std::vector<std::string>& stages) {
  PipelineRun r;
  r.cfg = load_run_config(std::string(SYMRAN_CONFIG_DIR) + "/" + name + ".json");
  r.dir = work_dir() / out;
  r.cfg.output_dir = r.dir.string();
  const auto t0 = clock_type::now();
  Pipeline p(r.cfg, &std::cerr);
  p.run(stages);
  r.seconds = seconds_since(t0);
  if (fs::exists(r.dir / "eval.json")) r.eval = read_json(r.dir / "eval.json");
  if (fs::exists(r.dir / "latency.json")) r.latency = read_json(r.dir / "latency.json");
  return r;
}

const PipelineRun& slicing_run() {
  static const PipelineRun r = run_pipeline("slicing", "slicing", stage_names());
  return r;
}

const PipelineRun& handover_run() {
  static const PipelineRun r = run_pipeline("handover", "handover", stage_names());
  return r;
}

std::shared_ptr<const Conceptizer> conceptizer_of(const PipelineRun& r) {
  return Pipeline(r.cfg, nullptr).load_conceptizer();
}

// Simulator states a few random actions apart.
std::vector<KpmState> simulator_states(Task task, std::size_t n, std::uint64_t seed) {
  EnvConfig ec;
  ec.task = task;
  ec.seed = seed;
  Environment env(ec);
  Rng rng = make_rng(seed, 0xAC);
  std::vector<KpmState> out;
  while (out.size() < n) {
    for (int k = 0; k < 5; ++k) {
      Action a(action_dim(task));
      for (double& v : a) v = uniform01(rng);
      if (task == Task::handover) {
        a[0] = a[0] < 0.1 ? 1.0 : 0.0;
      } else {
        double s = 0.0;
        for (double v : a) s += v;
        for (double& v : a) v /= s;
      }
      env.step(a);
    }
    out.push_back(env.state());
  }
  return out;
}

// --- planted slicing task -----------------------------------------------------

constexpr double planted_sigma = 0.02;
const char* planted_formula = "(+ (- (* 2 c0) c1) (* 0.5 (* c0 c1)))";

struct PlantedData {
  std::vector<TraceRecord> train, test;
};

const PlantedData& planted_data(std::uint64_t seed) {
  static std::map<std::uint64_t, PlantedData> cache;
  auto it = cache.find(seed);
  if (it != cache.end()) return it->second;
  EnvConfig ec;
  ec.task = Task::slicing;
  ec.seed = seed;
  ec.expose_true_concepts = true;
  Environment env(ec);
  ScriptedTeacherConfig tc;
  tc.noise_seed = seed;
  tc.sigma_z = planted_sigma;
  auto teacher = ScriptedTeacher::slicing_with(
      {ExpressionTree::parse(planted_formula), ExpressionTree::parse(scripted_urllc), ExpressionTree::parse(scripted_mmtc)}, tc);
  TraceBuffer buf(6000);
  collect_traces(env, teacher, 6000, buf);
  const auto recs = buf.snapshot();
  PlantedData d;
  d.train.assign(recs.begin(), recs.begin() + 5000);
  d.test.assign(recs.begin() + 5000, recs.end());
  return cache.emplace(seed, std::move(d)).first->second;
}

DsrConfig planted_dsr(std::uint64_t seed) {
  DsrConfig cfg;
  cfg.iterations = 60;
  cfg.seed = seed;
  return cfg;
}

// --- gradient-check fixtures ----------------------------------------------------

std::vector<TraceRecord> scripted_records(Task task, std::size_t steps, std::uint64_t seed) {
  EnvConfig ec;
  ec.task = task;
  ec.seed = seed;
  ec.expose_true_concepts = true;
  Environment env(ec);
  ScriptedTeacherConfig tc;
  tc.noise_seed = seed;
  auto teacher = task == Task::slicing ? ScriptedTeacher::slicing(tc) : ScriptedTeacher::handover(tc);
  TraceBuffer buf(steps);
  collect_traces(env, teacher, steps, buf);
  return buf.snapshot();
}

double fidelity_gradcheck(Task task) {
  const auto recs = scripted_records(task, 8, 11);
  auto init = [&](std::uint64_t seed) {
    ConceptizerConfig cfg;
    cfg.seed = seed;
    return Conceptizer::init(default_template(task), Normalizer::fit(task, recs), cfg);
  };
  const Conceptizer m = init(3);
  std::vector<FidelitySample> batch;
  for (const auto& r : recs) batch.push_back(prepare_fidelity_sample(m, r));
  const std::size_t dz = recs.front().z.size(), K = m.size(), np = m.parameter_count();
  Rng rng = make_rng(12, static_cast<std::uint64_t>(task));
  double worst = 0.0;
  for (int point = 0; point < 10; ++point) {
    // Heads centred on the batch keep every sigmoid out of its flat tails.
    Conceptizer at = init(100 + static_cast<std::uint64_t>(point));
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t dh = at.encoder(k).output_dim();
      Vector hp(dh + 1, 0.0), mean_h(dh, 0.0);
      for (std::size_t j = 0; j < dh; ++j) hp[j] = uniform(rng, -0.8, 0.8);
      for (const auto& smp : batch)
        for (const auto& x : smp.rows[k]) {
          const Vector h = at.encoder(k).forward(x);
          for (std::size_t j = 0; j < dh; ++j) mean_h[j] += h[j] / static_cast<double>(batch.size());
        }
      for (std::size_t j = 0; j < dh; ++j) hp[dh] -= hp[j] * mean_h[j];
      at.head(k).set_parameters(hp);
    }
    Vector p = at.parameters();
    for (std::size_t i = 0; i < dz * K + dz; ++i) p.push_back(uniform(rng, -1.0, 1.0));
    ValueAndGrad f = [&](std::span<const double> q, Vector* g) {
      Conceptizer mm = m;
      mm.set_parameters(q.subspan(0, np));
      AuxiliaryHead h{Matrix(dz, K, Vector(q.begin() + static_cast<std::ptrdiff_t>(np),
                                           q.begin() + static_cast<std::ptrdiff_t>(np + dz * K))),
                      Vector(q.begin() + static_cast<std::ptrdiff_t>(np + dz * K), q.end())};
      return fidelity_loss(mm, h, batch, g);
    };
    worst = std::max(worst, finite_diff_check(f, p));
  }
  return worst;
}

double logic_gradcheck() {
  Rng data_rng = make_rng(7, 0);
  LogicData d{Matrix(30, 3), Matrix(30, 2)};
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) d.C(i, k) = uniform01(data_rng);
    d.Z(i, 0) = d.C(i, 0) > 0.75 && d.C(i, 1) < 0.3 ? -1.0 : 1.0;
    d.Z(i, 1) = -d.Z(i, 0);
  }
  double worst = 0.0;
  for (std::uint64_t point = 0; point < 10; ++point) {
    LogicConfig cfg;
    cfg.comparisons = {{0, 2}};
    cfg.top_triples = 5;
    std::vector<Predicate> preds = build_vocabulary(d, cfg);
    std::vector<Rule> rules = build_rule_pool(preds, d, cfg);
    Rng rng = make_rng(100 + point, 1);
    for (auto& q : preds) {
      q.rho = uniform(rng, 0.0, 2.0);
      q.bias = uniform(rng, -1.0, 1.0);
    }
    for (auto& r : rules) r.w = uniform(rng, -1.0, 1.0);
    const RuleSet rs(d.C.cols(), d.Z.cols(), std::move(preds), std::move(rules), 2.0, 0.1);
    ValueAndGrad f = [&](std::span<const double> q, Vector* g) {
      RuleSet r = rs;
      r.set_parameters(q);
      return logic_kl(r, d, g);
    };
    worst = std::max(worst, finite_diff_check(f, rs.parameters()));
  }
  return worst;
}

double risk_gradcheck() {
  Rng data_rng = make_rng(7, 3);
  RiskData d;
  for (int i = 0; i < 40; ++i) {
    Vector c{uniform01(data_rng), uniform01(data_rng)};
    const int y = c[1] > 0.5 ? 1 : 0;
    d.push(std::move(c), {uniform01(data_rng)}, y);
  }
  double worst = 0.0;
  for (std::uint64_t point = 0; point < 10; ++point) {
    Rng rng = make_rng(point, 9);
    const RiskEstimator r = RiskEstimator::init(2, 1, 8, rng);
    ValueAndGrad f = [&](std::span<const double> p, Vector* g) {
      RiskEstimator tmp = r;
      tmp.net().set_parameters(p);
      if (g) g->assign(p.size(), 0.0);
      return risk_bce(tmp, d, g);
    };
    worst = std::max(worst, finite_diff_check(f, r.net().parameters()));
  }
  return worst;
}

double dsr_constant_gradcheck() {
  Rng data_rng = make_rng(5, 0);
  Dataset d{Matrix(100, 2), Vector(100)};
  for (std::size_t i = 0; i < 100; ++i) {
    d.X(i, 0) = uniform01(data_rng);
    d.X(i, 1) = uniform01(data_rng);
    d.y[i] = std::log(1 + d.X(i, 0)) + 0.3 * d.X(i, 1) * d.X(i, 0);
  }
  const auto t = ExpressionTree::parse("(+ (* 1.1 (log (+ 0.9 c0))) (* (- c1 0.4) (/ c0 (+ 2 c1))))");
  Rng rng = make_rng(5, 1);
  double worst = 0.0;
  for (int point = 0; point < 10; ++point) {
    Vector p(t.num_constants());
    for (double& v : p) v = uniform(rng, 0.5, 2.0);
    ValueAndGrad f = [&](std::span<const double> q, Vector* g) { return constant_mse(t, q, d, g); };
    worst = std::max(worst, finite_diff_check(f, p));
  }
  return worst;
}

}  // namespace

TEST(Acceptance, OffSupportAttributionIsExactlyZero) {
  criterion(1, "off-support IG attribution", [] {
    Outcome o{true, ""};
    for (const PipelineRun* run : {&slicing_run(), &handover_run()}) {
      const auto model = conceptizer_of(*run);
      const Task task = run->cfg.task;
      const auto states = simulator_states(task, 50, 101);
      const auto t0 = clock_type::now();
      const AuditReport rep = audit_support_mask(*model, states, IgConfig{std::nullopt, 256});
      const double sec = seconds_since(t0);
      const bool ok = rep.passed() && sec < 60.0;
      o.pass = o.pass && ok;
      o.detail += std::string(to_string(task)) + " max off-support " + num(rep.off_support_max) + " in " +
                  num(sec, 3) + " s; ";
    }
    return o;
  });
}

TEST(Acceptance, IntegratedGradientsComplete) {
  criterion(2, "IG completeness at N_ig = 256", [] {
    double worst = 0.0;
    int pairs = 0;
    for (const PipelineRun* run : {&slicing_run(), &handover_run()}) {
      const auto model = conceptizer_of(*run);
      const auto states = simulator_states(run->cfg.task, 10, 202);
      Rng rng = make_rng(203, static_cast<std::uint64_t>(run->cfg.task));
      for (const KpmState& s : states) {
        const std::size_t k = uniform_index(rng, model->size());
        const Matrix attr = ig_attribution(*model, k, s, IgConfig{std::nullopt, 256});
        double sum = 0.0;
        for (double v : attr.data()) sum += v;
        const double delta = model->conceptize(s)[k] - model->conceptize(model->baseline_state(s))[k];
        worst = std::max(worst, std::abs(sum - delta) / std::max(1.0, std::abs(delta)));
        ++pairs;
      }
    }
    return Outcome{pairs == 20 && worst <= 1e-3,
                   std::to_string(pairs) + " (s,k) pairs, max |sum - delta| / max(1,|delta|) = " + num(worst)};
  });
}

TEST(Acceptance, GradientsMatchFiniteDifferences) {
  criterion(3, "finite-difference gradient checks", [] {
    const double fid = std::max(fidelity_gradcheck(Task::slicing), fidelity_gradcheck(Task::handover));
    const double kl = logic_gradcheck(), bce = risk_gradcheck(), cst = dsr_constant_gradcheck();
    const double worst = std::max({fid, kl, bce, cst});
    return Outcome{worst < 1e-4, "max rel error: fidelity " + num(fid, 3) + ", logic KL " + num(kl, 3) +
                                     ", risk BCE " + num(bce, 3) + ", DSR constants " + num(cst, 3)};
  });
}

TEST(Acceptance, PlantedExpressionRecovered) {
  criterion(4, "planted expression recovery", [] {
    int good = 0;
    bool fast = true, budget = true;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const PlantedData& d = planted_data(seed);
      FeatureFn f = [](const TraceRecord& r) { return r.c_true; };
      const DsrConfig cfg = planted_dsr(seed);
      const auto t0 = clock_type::now();
      const DsrResult res = distill_continuous(d.train, f, 0, cfg);
      const double sec = seconds_since(t0);
      const double held = expression_mse(res.best, make_dataset(d.test, f, 0));
      const bool ok = res.train_j >= 0.999 && held <= 2.0 * planted_sigma * planted_sigma;
      good += ok ? 1 : 0;
      fast = fast && sec <= 600.0;
      budget = budget && res.evaluations <= 200000;
      detail += "seed " + std::to_string(seed) + ": J " + num(res.train_j, 6) + " mse " + num(held, 3) + " (" +
                std::to_string(res.evaluations) + " evals, " + num(sec, 3) + " s); ";
    }
    return Outcome{good >= 4 && fast && budget, std::to_string(good) + "/5 seeds; " + detail};
  });
}

TEST(Acceptance, PlantedDecisionTableRecovered) {
  criterion(5, "planted decision-table recovery", [] {
    const auto recs = scripted_records(Task::handover, 20000, 1);
    std::span<const TraceRecord> train(recs.data(), 10000), test(recs.data() + 10000, 10000);
    FeatureFn f = [](const TraceRecord& r) { return r.c_true; };
    LogicConfig cfg;
    cfg.comparisons = default_comparisons(Task::handover);
    const auto t0 = clock_type::now();
    const LogicFit fit = distill_discrete(train, f, cfg);
    const DecisionTable table =
        compile_rules(fit.ruleset, concept_symbols(Task::handover), action_labels(Task::handover));
    const double sec = seconds_since(t0);
    std::size_t agree = 0;
    for (const auto& r : test) agree += table.eval(r.c_true) == static_cast<int>(argmax(r.z)) ? 1 : 0;
    const double agreement = static_cast<double>(agree) / static_cast<double>(test.size());
    const double held_kl = logic_kl(fit.ruleset, make_logic_data(test, f));
    return Outcome{agreement >= 0.98 && held_kl <= 0.05 && fit.ruleset.kappa() == 2.0 && sec <= 600.0,
                   "agreement " + num(agreement) + " on 10000 held-out states, KL train " + num(fit.final_kl, 3) +
                       " held-out " + num(held_kl, 3) + ", " + num(sec, 3) + " s"};
  });
}

TEST(Acceptance, ProductTNormExample) {
  criterion(6, "product t-norm example", [] {
    const Vector v{0.9, 0.2};
    const double a = rule_activation({{0, 1}, 0, 0.0}, v);
    return Outcome{std::abs(a - 0.18) < 1e-12, "activation " + num(a, 17)};
  });
}

TEST(Acceptance, CorrectionIsFeasibleAndIdempotent) {
  criterion(7, "shield correction feasibility", [] {
    const SliceBounds b{0.25, 1.0};
    const auto rules = default_correction_rules(Task::slicing, b, 2);
    KpmState s;
    s.task = Task::slicing;
    Rng rng = make_rng(77, 0);
    double worst_sum = 0.0;
    std::size_t bound_violations = 0, not_idempotent = 0;
    for (int i = 0; i < 10000; ++i) {
      Action a(3);
      for (double& x : a) x = uniform(rng, -1.0, 2.0);
      if (i % 10 == 0) a[static_cast<std::size_t>(i / 10) % 3] = 5.0;
      const Action out = apply_correction_rules(rules, a, s);
      double sum = 0.0;
      for (double x : out) {
        bound_violations += (x < b.a_min || x > b.a_max) ? 1 : 0;
        sum += x;
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      not_idempotent += apply_correction_rules(rules, out, s) == out ? 0 : 1;
    }
    return Outcome{worst_sum <= 1e-9 && bound_violations == 0 && not_idempotent == 0,
                   "max |sum - 1| " + num(worst_sum, 3) + ", bound violations " + std::to_string(bound_violations) +
                       ", non-idempotent " + std::to_string(not_idempotent) + " of 10000"};
  });
}

TEST(Acceptance, RetrievalMatchesBruteForce) {
  criterion(8, "nearest safe retrieval", [] {
    Rng rng = make_rng(88, 0);
    SafeBank bank(5000);
    for (int i = 0; i < 5000; ++i) {
      Vector c(4);
      // Half the entries on a coarse grid so exact distance ties occur.
      for (double& x : c) x = i % 2 ? std::floor(uniform01(rng) * 6.0) / 5.0 : uniform01(rng);
      bank.add({c, {static_cast<double>(i)}, i, 10});
    }
    std::size_t mismatches = 0;
    for (int q = 0; q < 1000; ++q) {
      Vector c(4);
      for (double& x : c) x = q % 3 ? uniform01(rng) : std::floor(uniform01(rng) * 6.0) / 5.0;
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < bank.size(); ++j) {
        double dj = 0.0;
        for (std::size_t k = 0; k < 4; ++k) dj += (bank[j].c[k] - c[k]) * (bank[j].c[k] - c[k]);
        if (dj < best_d) {
          best_d = dj;
          best = j;
        }
      }
      mismatches += retrieve_safe(bank, c) == bank[best].a ? 0 : 1;
    }
    return Outcome{mismatches == 0, std::to_string(mismatches) + " mismatches over 1000 queries, 5000 entries"};
  });
}

TEST(Acceptance, EndToEndRecovery) {
  criterion(9, "end-to-end reward recovery and agreement", [] {
    const PipelineRun& s = slicing_run();
    const PipelineRun& h = handover_run();
    const auto full = s.cell("full");
    const double recovery = full.at("recovery").get<double>();
    const double agreement = h.cell("full").at("agreement").get<double>();
    const bool protocol = s.cfg.teacher.kind == "neural" && h.cfg.teacher.kind == "neural" &&
                          s.eval.at("seeds").size() == 5 && s.eval.at("steps") == 2000;
    return Outcome{protocol && recovery >= 0.9 && agreement >= 0.95 && s.seconds <= 1200.0 && h.seconds <= 1200.0,
                   "slicing shielded recovery " + num(recovery) + " (teacher " +
                       num(full.at("teacher_reward").get<double>()) + ", student " +
                       num(full.at("student_reward").get<double>()) + "), handover agreement " + num(agreement) +
                       "; pipelines " + num(s.seconds, 3) + " s and " + num(h.seconds, 3) + " s"};
  });
}

TEST(Acceptance, ShieldStagesEachReduceViolations) {
  criterion(10, "shield ablation trend", [] {
    const PipelineRun& s = slicing_run();
    auto v = [&](const char* cell, const char* key) { return s.cell(cell).at(key).get<double>(); };
    const double f_thp = v("full", "student_v_thp"), f_dly = v("full", "student_v_dly");
    const double u_thp = v("unshielded", "student_v_thp"), u_dly = v("unshielded", "student_v_dly");
    const double nc_thp = v("no-correction", "student_v_thp"), nr_dly = v("no-retrieval", "student_v_dly");
    const bool ok = f_thp <= u_thp && f_dly <= u_dly && nc_thp > f_thp && nr_dly > f_dly;
    return Outcome{ok, "V_thp full " + num(f_thp) + " / unshielded " + num(u_thp) + " / no correction " + num(nc_thp) +
                           "; V_dly full " + num(f_dly) + " / unshielded " + num(u_dly) + " / no retrieval " +
                           num(nr_dly)};
  });
}

TEST(Acceptance, ConceptsBeatRawKpms) {
  criterion(11, "concepts vs raw KPMs under equal DSR budget", [] {
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const PlantedData& d = planted_data(seed);
      ConceptizerConfig cc;
      cc.max_epochs = 50;
      cc.seed = derive_seed(seed, 6);
      const Conceptizer cz = train_conceptizer(default_template(Task::slicing), d.train, cc).model;
      const RawFeatures raw = RawFeatures::fit(Task::slicing, d.train);
      FeatureFn fc = [&](const TraceRecord& r) { return cz.conceptize(r.s); };
      FeatureFn fr = [&](const TraceRecord& r) { return raw(r.s); };
      const DsrResult rc = distill_continuous(d.train, fc, 0, planted_dsr(seed));
      const DsrResult rr = distill_continuous(d.train, fr, 0, planted_dsr(seed));
      wins += rr.train_j < rc.train_j ? 1 : 0;
      detail += "seed " + std::to_string(seed) + ": J concepts " + num(rc.train_j, 5) + " raw " + num(rr.train_j, 5) +
                "; ";
    }
    return Outcome{wins >= 4, std::to_string(wins) + "/5 seeds raw < concepts; " + detail};
  });
}

TEST(Acceptance, SymbolicStudentIsFaster) {
  criterion(12, "student vs teacher per-decision latency", [] {
    bool ok = true;
    std::string detail;
    for (const PipelineRun* run : {&slicing_run(), &handover_run()}) {
      const Pipeline p(run->cfg, nullptr);
      const Student student = p.load_student();
      const auto recs = p.load_traces();
      std::vector<KpmState> corpus;
      for (std::size_t i = 0; i < std::min<std::size_t>(recs.size(), 10000); ++i) corpus.push_back(recs[i].s);
      std::vector<Vector> feats;
      for (const auto& s : corpus) feats.push_back(student.features(s));
      const auto teacher = std::make_shared<const NeuralTeacher>(
          NeuralTeacher::from_json(read_json(run->dir / "teacher.json").at("model")));
      const KpmState* base = corpus.data();
      const std::vector<TimedPolicy> ps{
          {"teacher", [&](const KpmState& s) { return teacher->act(s).a[0]; }},
          {"student", [&](const KpmState& s) { return student.decide(s).a[0]; }},
          {"program", [&](const KpmState& s) { return student.act_on(feats[static_cast<std::size_t>(&s - base)])[0]; }}};
      const LatencyReport rep = latency_bench(ps, corpus, 3, 100000);
      const double ratio = rep.speedup("teacher", "student");
      ok = ok && ratio >= 5.0;
      detail += std::string(to_string(run->cfg.task)) + " teacher " + num(rep.at("teacher").median_ns, 4) +
                " ns, student " + num(rep.at("student").median_ns, 4) + " ns, ratio " + num(ratio, 3) +
                " (program only " + num(rep.speedup("teacher", "program"), 3) + "); ";
    }
    return Outcome{ok, detail};
  });
}

TEST(Acceptance, ArtifactsAreByteIdentical) {
  criterion(13, "deterministic artifacts", [] {
    const PipelineRun& first = slicing_run();
    const PipelineRun second =
        run_pipeline("slicing", "slicing_repeat", {"traces", "conceptizer", "distill", "compile", "shield"});
    auto bytes = [](const fs::path& p) {
      std::ifstream is(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(is), {});
    };
    bool ok = true;
    std::string detail;
    for (const char* name : {"traces.jsonl", "policy.json", "bank.jsonl"}) {
      const std::string a = bytes(first.dir / name), b = bytes(second.dir / name);
      const bool same = !a.empty() && a == b;
      ok = ok && same;
      detail += std::string(name) + (same ? " identical" : " DIFFERS") + " (" + std::to_string(a.size()) + " B); ";
    }
    return Outcome{ok, detail};
  });
}

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  const int rc = RUN_ALL_TESTS();
  int failed = 0;
  for (const auto& [id, pass] : verdicts()) failed += pass ? 0 : 1;
  std::printf("acceptance: %zu criteria run, %d failed\n", verdicts().size(), failed);
  return rc;
}
