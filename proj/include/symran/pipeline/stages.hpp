#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "symran/concept/conceptizer.hpp"
#include "symran/concept/ig.hpp"
#include "symran/dsr/search.hpp"
#include "symran/eval/latency.hpp"
#include "symran/eval/omega.hpp"
#include "symran/eval/report.hpp"
#include "symran/eval/rollout.hpp"
#include "symran/logic/distill.hpp"
#include "symran/pipeline/config.hpp"
#include "symran/pipeline/student.hpp"
#include "symran/shield/bank.hpp"
#include "symran/shield/risk.hpp"
#include "symran/shield/shield.hpp"
#include "symran/teacher/neural.hpp"
#include "symran/teacher/teacher.hpp"
#include "symran/teacher/trace.hpp"

namespace symran {

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"traces",  "conceptizer", "audit",    "distill",
                                              "compile", "shield",      "evaluate", "report"};
  return names;
}

/// Comma-separated stage list to canonical order; unknown names are config errors.
inline std::vector<std::string> parse_stages(const std::string& csv) {
  std::vector<bool> want(stage_names().size(), false);
  std::stringstream ss(csv);
  std::string tok;
  bool any = false;
  while (std::getline(ss, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (tok.empty()) continue;
    if (tok == "all") {
      std::fill(want.begin(), want.end(), true);
      any = true;
      continue;
    }
    const auto it = std::find(stage_names().begin(), stage_names().end(), tok);
    if (it == stage_names().end()) throw ConfigError("unknown stage \"" + tok + "\"");
    want[static_cast<std::size_t>(it - stage_names().begin())] = true;
    any = true;
  }
  if (!any) throw ConfigError("no stages given");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < want.size(); ++i)
    if (want[i]) out.push_back(stage_names()[i]);
  return out;
}

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw ArtifactError("missing artifact: " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(p.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ArtifactError("cannot write " + p.string());
  os << text;
}

inline void write_json_file(const std::filesystem::path& p, const nlohmann::json& j) {
  write_text_file(p, j.dump(2) + "\n");
}

inline void require_artifact(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw ArtifactError("missing artifact: " + p.string());
}

inline std::vector<Vector> features_of(std::span<const TraceRecord> recs, const std::function<Vector(const KpmState&)>& f) {
  std::vector<Vector> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(f(r.s));
  return out;
}

/// FeatureFn over a precomputed table; only valid for records of `recs` itself.
inline FeatureFn table_features(std::span<const TraceRecord> recs, const std::vector<Vector>& table) {
  const TraceRecord* base = recs.data();
  return [base, &table](const TraceRecord& r) { return table[static_cast<std::size_t>(&r - base)]; };
}

inline nlohmann::json cell_json(const std::string& name, const ComparisonReport& r) {
  std::size_t triggers = 0, warnings = 0;
  for (const auto& e : r.student) {
    triggers += e.shield_triggers;
    warnings += e.shield_warnings;
  }
  nlohmann::json q = nlohmann::json::array();
  if (!r.teacher_reward_cdf.x.empty() && !r.student_reward_cdf.x.empty())
    for (double p : {0.1, 0.25, 0.5, 0.75, 0.9})
      q.push_back({{"p", p},
                   {"teacher_reward", r.teacher_reward_cdf.quantile(p)},
                   {"student_reward", r.student_reward_cdf.quantile(p)},
                   {"teacher_v_thp", r.teacher_v_thp_cdf.quantile(p)},
                   {"student_v_thp", r.student_v_thp_cdf.quantile(p)},
                   {"teacher_v_dly", r.teacher_v_dly_cdf.quantile(p)},
                   {"student_v_dly", r.student_v_dly_cdf.quantile(p)}});
  return {{"cell", name},
          {"teacher_reward", r.teacher_mean},
          {"student_reward", r.student_mean},
          {"recovery", r.recovery},
          {"reward_gap", r.student_mean - r.teacher_mean},
          {"teacher_v_thp", r.teacher_v_thp},
          {"student_v_thp", r.student_v_thp},
          {"teacher_v_dly", r.teacher_v_dly},
          {"student_v_dly", r.student_v_dly},
          {"agreement", r.agreement},
          {"shield_triggers", triggers},
          {"shield_warnings", warnings},
          {"omega", r.student_omega ? nlohmann::json(*r.student_omega) : nlohmann::json(nullptr)},
          {"quantiles", q}};
}

}  // namespace detail

/// Result of the distill stage: one expression per logit (slicing) or a
/// trained rule set (handover).
struct DistilledProgram {
  std::vector<ExpressionTree> expressions;
  std::optional<RuleSet> ruleset;
  nlohmann::json meta = nlohmann::json::object();
};

inline DistilledProgram distill_program(const RunConfig& cfg, std::span<const TraceRecord> recs,
                                        const std::vector<Vector>& feats) {
  const FeatureFn f = detail::table_features(recs, feats);
  DistilledProgram out;
  if (cfg.task == Task::slicing) {
    nlohmann::json dims = nlohmann::json::array();
    for (std::size_t d = 0; d < logit_dim(cfg.task); ++d) {
      DsrConfig dc = cfg.dsr;
      dc.seed = derive_seed(cfg.seed, 10 + d);
      const DsrResult r = distill_continuous(recs, f, d, dc);
      dims.push_back({{"prefix", r.best.to_prefix()},
                      {"infix", r.best.to_infix()},
                      {"train_j", r.train_j},
                      {"train_mse", r.train_mse},
                      {"evaluations", r.evaluations}});
      out.expressions.push_back(r.best);
    }
    out.meta = {{"kind", "expressions"}, {"dims", dims}};
  } else {
    LogicConfig lc = cfg.logic;
    lc.seed = derive_seed(cfg.seed, 20);
    if (feats.empty() || feats[0].size() != true_concept_count(cfg.task)) lc.comparisons.clear();
    LogicFit fit = distill_discrete(recs, f, lc);
    out.meta = {{"kind", "ruleset"}, {"final_kl", fit.final_kl}, {"ruleset", fit.ruleset.to_json()}};
    out.ruleset = std::move(fit.ruleset);
  }
  return out;
}

/// Compiles a distilled program into a deployable student.
inline Student compile_student(const RunConfig& cfg, const DistilledProgram& prog,
                               std::shared_ptr<const Conceptizer> conceptizer, RawFeatures raw = {}) {
  Student s;
  s.task = cfg.task;
  s.conceptizer = std::move(conceptizer);
  s.raw = std::move(raw);
  s.head_temperature = cfg.teacher.head_temperature;
  if (cfg.task == Task::slicing) {
    s.kind = StudentKind::expressions;
    s.expressions = prog.expressions;
  } else {
    if (!prog.ruleset) throw ArtifactError("compile: distilled program has no rule set");
    s.kind = StudentKind::table;
    s.table = compile_rules(*prog.ruleset, s.symbols(), action_labels(cfg.task));
    // Concepts are sigmoid outputs, so tests that are constant on [0, 1] carry no information.
    if (s.conceptizer) s.table = simplify_on_box(s.table, 0.0, 1.0);
  }
  return s;
}

/// Stage runner. Every artifact lands in cfg.output_dir; JSON artifacts carry
/// the config hash.
class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg, std::ostream* log = nullptr)
      : cfg_(std::move(cfg)), hash_(config_hash(cfg_)), dir_(cfg_.output_dir), log_(log) {}

  const RunConfig& config() const noexcept { return cfg_; }
  const std::string& hash() const noexcept { return hash_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  void run(std::span<const std::string> stages) {
    std::filesystem::create_directories(dir_);
    for (const auto& s : stages) run_stage(s);
  }

  void run_stage(const std::string& name) {
    note("stage " + name);
    if (name == "traces") traces();
    else if (name == "conceptizer") conceptizer();
    else if (name == "audit") audit();
    else if (name == "distill") distill();
    else if (name == "compile") compile();
    else if (name == "shield") shield();
    else if (name == "evaluate") evaluate();
    else if (name == "report") report();
    else throw ConfigError("unknown stage \"" + name + "\"");
  }

  // --- stages ---------------------------------------------------------------

  void traces() {
    std::filesystem::create_directories(dir_);
    nlohmann::json cfg_art = {{"config_hash", hash_}, {"config", canonical_json(cfg_)}};
    detail::write_json_file(path("config.json"), cfg_art);

    ScriptedTeacherConfig sc{cfg_.teacher.sigma_z, cfg_.teacher.head_temperature, cfg_.teacher.switch_logit, 0};
    nlohmann::json teacher_art = {{"config_hash", hash_}, {"kind", cfg_.teacher.kind}};
    EnvConfig trace_env = cfg_.env;
    trace_env.seed = derive_seed(cfg_.seed, 1);
    TraceBuffer buf(cfg_.teacher.trace_steps);
    if (cfg_.teacher.kind == "scripted") {
      sc.noise_seed = derive_seed(cfg_.seed, 2);
      ScriptedTeacher t = make_scripted(sc);
      Environment env(trace_env);
      collect_traces(env, t, cfg_.teacher.trace_steps, buf);
      teacher_art["sigma_z"] = sc.sigma_z;
      teacher_art["head_temperature"] = sc.head_temperature;
      teacher_art["switch_logit"] = sc.switch_logit;
    } else {
      EnvConfig demo_env = cfg_.env;
      demo_env.seed = derive_seed(cfg_.seed, 3);
      sc.noise_seed = derive_seed(cfg_.seed, 4);
      ScriptedTeacher demo = make_scripted(sc);
      Environment env(demo_env);
      TraceBuffer demos(cfg_.teacher.bc_records);
      collect_traces(env, demo, cfg_.teacher.bc_records, demos);
      BcConfig bc = cfg_.teacher.bc;
      bc.seed = derive_seed(cfg_.seed, 5);
      bc.head_temperature = cfg_.teacher.head_temperature;
      bc.min_records = std::min(bc.min_records, cfg_.teacher.bc_records);
      BcResult fit = train_bc_teacher(demos, bc);
      note("bc teacher held-out mse " + fmt(fit.heldout_mse, 5));
      teacher_art["bc"] = {{"initial_heldout_mse", fit.initial_heldout_mse},
                           {"train_mse", fit.train_mse},
                           {"heldout_mse", fit.heldout_mse},
                           {"heldout_mae", fit.heldout_mae}};
      teacher_art["model"] = fit.teacher.to_json();
      Environment env2(trace_env);
      collect_traces(env2, fit.teacher, cfg_.teacher.trace_steps, buf);
    }
    detail::write_json_file(path("teacher.json"), teacher_art);
    write_traces(path("traces.jsonl").string(), buf);
    note("wrote " + std::to_string(buf.size()) + " trace records");
  }

  void conceptizer() {
    const auto recs = load_traces();
    ConceptizerConfig cc = cfg_.concepts.cfg;
    cc.seed = derive_seed(cfg_.seed, 6);
    ConceptizerFit fit = train_conceptizer(cfg_.concept_template(), std::span<const TraceRecord>(recs), cc);
    if (!std::isfinite(fit.final_loss)) throw NumericError("conceptizer: non-finite fidelity loss");
    note("conceptizer fidelity loss " + fmt(fit.final_loss, 5) + " after " + std::to_string(fit.epochs) + " epochs");
    detail::write_json_file(path("conceptizer.json"), {{"config_hash", hash_},
                                                       {"final_loss", fit.final_loss},
                                                       {"epochs", fit.epochs},
                                                       {"model", fit.model.to_json()}});
  }

  void audit() {
    const auto cz = load_conceptizer();
    const auto recs = load_traces();
    const std::size_t n = std::min(cfg_.audit.probes, recs.size());
    std::vector<KpmState> probes;
    for (std::size_t i = 0; i < n; ++i) probes.push_back(recs[i * recs.size() / n].s);
    IgConfig ig;
    ig.steps = cfg_.audit.n_ig;
    const AuditReport rep = audit_support_mask(*cz, probes, ig);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows)
      rows.push_back({{"concept", r.concept_name}, {"metric_id", r.metric_id}, {"max_abs", r.max_abs}, {"mean", r.mean}});
    note(std::string("audit ") + (rep.passed() ? "passed" : "FAILED") + ", off-support max " + fmt(rep.off_support_max, 6));
    detail::write_json_file(path("audit.json"), {{"config_hash", hash_},
                                                 {"probes", rep.probes},
                                                 {"n_ig", cfg_.audit.n_ig},
                                                 {"off_support_max", rep.off_support_max},
                                                 {"max_completeness_error", rep.max_completeness_error},
                                                 {"passed", rep.passed()},
                                                 {"rows", rows}});
  }

  void distill() {
    const auto cz = load_conceptizer();
    const auto recs = load_traces();
    const auto feats = detail::features_of(recs, [&](const KpmState& s) { return cz->conceptize(s); });
    DistilledProgram prog = distill_program(cfg_, recs, feats);
    prog.meta["config_hash"] = hash_;
    detail::write_json_file(path("distill.json"), prog.meta);
  }

  void compile() {
    const auto cz = load_conceptizer();
    const nlohmann::json d = load("distill.json");
    DistilledProgram prog;
    try {
      if (d.at("kind") == "expressions") {
        for (const auto& dim : d.at("dims")) prog.expressions.push_back(ExpressionTree::parse(dim.at("prefix").get<std::string>()));
      } else {
        prog.ruleset = RuleSet::from_json(d.at("ruleset"));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(path("distill.json").string() + ": " + e.what());
    }
    const Student s = compile_student(cfg_, prog, cz);
    nlohmann::json j = s.to_json();
    j["config_hash"] = hash_;
    detail::write_json_file(path("policy.json"), j);
    detail::write_text_file(path("policy.txt"), s.pretty());
    note("compiled " + std::string(to_string(s.kind)) + " student, Omega " + std::to_string(s.omega_total().value_or(0)));
  }

  void shield() {
    const auto cz = load_conceptizer();
    const auto recs = load_traces();
    const auto feats = detail::features_of(recs, [&](const KpmState& s) { return cz->conceptize(s); });
    const ConceptFn cf = detail::table_features(recs, feats);
    SafeBank bank = admit_from_trace(recs, cf, cfg_.shield.bank);
    RiskConfig rc = cfg_.shield.risk;
    rc.seed = derive_seed(cfg_.seed, 30);
    RiskFit fit = train_risk_estimator(risk_data_from_trace(recs, cf, cfg_.shield.bank), rc);
    nlohmann::json warnings = fit.warnings;
    double delta = 1.0;
    if (bank.size() > 0) {
      delta = calibrate_threshold(fit.estimator, bank, cfg_.shield.percentile);
    } else {
      fit.estimator.set_delta(delta);
      warnings.push_back("empty safe bank: retrieval disabled by delta = 1");
    }
    note("safe bank " + std::to_string(bank.size()) + " entries, delta " + fmt(delta));
    write_bank(path("bank.jsonl").string(), bank);
    detail::write_json_file(path("risk.json"), {{"config_hash", hash_},
                                                {"percentile", cfg_.shield.percentile},
                                                {"delta", delta},
                                                {"final_loss", fit.loss_history.empty() ? 0.0 : fit.loss_history.back()},
                                                {"warnings", warnings},
                                                {"model", fit.estimator.to_json()}});
    detail::write_json_file(path("shield.json"), {{"config_hash", hash_},
                                                  {"a_min", cfg_.shield.bounds.a_min},
                                                  {"a_max", cfg_.shield.bounds.a_max},
                                                  {"dwell", cfg_.shield.dwell},
                                                  {"horizon", cfg_.shield.bank.horizon},
                                                  {"tolerance", cfg_.shield.bank.tolerance},
                                                  {"bank_size", bank.size()},
                                                  {"delta", delta}});
  }

  void evaluate() {
    for (const char* name : {"policy.json", "teacher.json", "conceptizer.json", "bank.jsonl", "risk.json", "shield.json"})
      detail::require_artifact(path(name));
    const Student student = load_student();
    const PolicyFactory teacher = teacher_factory();
    const PolicyFactory student_f = stateless(student.policy());
    const auto& seeds = cfg_.eval.seeds;
    const std::size_t steps = cfg_.eval.steps;

    nlohmann::json cells = nlohmann::json::array();
    std::ofstream series(path("series.csv"), std::ios::binary);
    bool header = true;
    auto add = [&](const std::string& name, const ComparisonReport& r) {
      cells.push_back(detail::cell_json(name, r));
      std::ostringstream os;
      write_series_csv(os, r, name);
      std::string text = os.str();
      if (!header) text.erase(0, text.find('\n') + 1);
      header = false;
      series << text;
      note("cell " + name + ": recovery " + fmt(r.recovery, 3) + ", V_thp " + fmt(r.student_v_thp) + ", V_dly " +
           fmt(r.student_v_dly));
    };
    const std::optional<int> omega = student.omega_total();
    struct Cell {
      const char* name;
      std::optional<ShieldStages> stages;
    };
    for (const Cell& c : {Cell{"full", ShieldStages{true, true}}, Cell{"unshielded", std::nullopt},
                          Cell{"no-correction", ShieldStages{false, true}}, Cell{"no-retrieval", ShieldStages{true, false}}}) {
      std::unique_ptr<Shield> sh;
      if (c.stages) sh = std::make_unique<Shield>(load_shield(*c.stages));
      std::vector<nlohmann::json> log;
      const bool full = std::string(c.name) == "full";
      ComparisonReport r = compare_policies(cfg_.env, teacher, student_f, sh.get(), seeds, steps, full ? &log : nullptr);
      r.student_omega = omega;
      add(c.name, r);
      if (full) {
        std::ofstream os(path("shield_log.jsonl"), std::ios::binary);
        for (const auto& j : log) os << j.dump() << '\n';
      }
    }
    if (cfg_.eval.ablations) {
      for (auto& [name, s] : ablation_students()) {
        ComparisonReport r = compare_policies(cfg_.env, teacher, stateless(s.policy()), nullptr, seeds, steps);
        r.student_omega = s.omega_total();
        add(name, r);
      }
    }
    detail::write_json_file(path("eval.json"), {{"config_hash", hash_},
                                                {"seeds", seeds},
                                                {"steps", steps},
                                                {"teacher", cfg_.teacher.kind},
                                                {"cells", cells}});
    if (cfg_.eval.latency_inputs > 0) latency(student);
  }

  void report() {
    const nlohmann::json conf = load("config.json");
    const nlohmann::json audit = load("audit.json");
    const nlohmann::json policy = load("policy.json");
    const nlohmann::json eval = load("eval.json");
    const nlohmann::json shield = load("shield.json");
    const Student student = load_student();
    std::ostringstream md;
    md << "# symran report\n\n";
    md << "## Config digest\n\n";
    md << markdown_table({"key", "value"}, {{"config hash", hash_},
                                            {"task", std::string(to_string(cfg_.task))},
                                            {"seed", std::to_string(cfg_.seed)},
                                            {"teacher", cfg_.teacher.kind},
                                            {"trace steps", std::to_string(cfg_.teacher.trace_steps)},
                                            {"eval seeds", eval.at("seeds").dump()},
                                            {"eval steps", eval.at("steps").dump()}});
    md << "\n## Concept audit\n\n";
    md << "Off-support attribution max: " << fmt(audit.at("off_support_max").get<double>(), 6)
       << (audit.at("passed").get<bool>() ? " (PASS)" : " (FAIL)") << "  \n";
    md << "Max completeness error: " << fmt(audit.at("max_completeness_error").get<double>(), 6) << "  \n";
    md << "Probes: " << audit.at("probes").dump() << ", N_ig = " << audit.at("n_ig").dump() << "\n\n";
    std::vector<std::vector<std::string>> arows;
    for (const auto& r : audit.at("rows"))
      arows.push_back({r.at("concept").get<std::string>(), std::to_string(r.at("metric_id").get<int>()),
                       fmt(r.at("mean").get<double>()), fmt(r.at("max_abs").get<double>())});
    md << markdown_table({"concept", "metric", "mean IG", "max |IG|"}, arows);
    md << "\n## Policy\n\n```\n" << student.pretty() << "```\n";
    md << "\n## Omega\n\n";
    std::vector<std::vector<std::string>> orows;
    if (student.kind != StudentKind::net) {
      const OmegaReport o = student.kind == StudentKind::table ? omega(student.table) : omega(student.expressions);
      orows = {{"variables", std::to_string(o.variables)},       {"constants", std::to_string(o.constants)},
               {"operators", std::to_string(o.operators)},       {"comparators", std::to_string(o.comparators)},
               {"connectives", std::to_string(o.connectives)},   {"action labels", std::to_string(o.action_labels)},
               {"total (" + o.convention + ")", std::to_string(o.total())}};
    }
    md << markdown_table({"category", "count"}, orows);
    md << "\n## Rewards and violations\n\n";
    std::vector<std::vector<std::string>> rrows;
    for (const auto& c : eval.at("cells"))
      rrows.push_back({c.at("cell").get<std::string>(), fmt(c.at("teacher_reward").get<double>()),
                       fmt(c.at("student_reward").get<double>()), fmt(c.at("recovery").get<double>(), 3),
                       fmt(c.at("reward_gap").get<double>()),
                       fmt(c.at("teacher_v_thp").get<double>()), fmt(c.at("student_v_thp").get<double>()),
                       fmt(c.at("teacher_v_dly").get<double>()), fmt(c.at("student_v_dly").get<double>()),
                       fmt(c.at("agreement").get<double>(), 3), c.at("shield_triggers").dump(),
                       c.at("omega").is_null() ? "-" : c.at("omega").dump()});
    md << markdown_table({"cell", "teacher reward", "student reward", "recovery", "reward gap", "teacher V_thp", "student V_thp",
                          "teacher V_dly", "student V_dly", "agreement", "shield triggers", "Omega"},
                         rrows);
    md << "\nRecovery is student / teacher mean reward; with a negative teacher mean read the reward gap "
          "(student - teacher) instead.\n";
    for (const auto& c : eval.at("cells")) {
      if (c.at("cell") != "full" || c.at("quantiles").empty()) continue;
      md << "\nPooled quantiles (full cell):\n\n";
      std::vector<std::vector<std::string>> qrows;
      for (const auto& q : c.at("quantiles"))
        qrows.push_back({fmt(q.at("p").get<double>(), 2), fmt(q.at("teacher_reward").get<double>()),
                         fmt(q.at("student_reward").get<double>()), fmt(q.at("student_v_thp").get<double>()),
                         fmt(q.at("student_v_dly").get<double>())});
      md << markdown_table({"p", "teacher reward", "student reward", "student V_thp", "student V_dly"}, qrows);
    }
    md << "\n## Latency\n\n";
    if (std::filesystem::exists(path("latency.json"))) {
      const nlohmann::json lat = load("latency.json");
      std::vector<std::vector<std::string>> lrows;
      for (const auto& r : lat.at("results"))
        lrows.push_back({r.at("name").get<std::string>(), fmt(r.at("median_ns").get<double>(), 1)});
      md << markdown_table({"policy", "median ns / decision"}, lrows);
      md << "\nTeacher / student latency ratio: "
         << (lat.at("ratio").is_null() ? std::string("n/a (scripted teacher)") : fmt(lat.at("ratio").get<double>(), 2))
         << (lat.at("low_confidence").get<bool>() ? " (low confidence: fewer than 3 repetitions)" : "") << "\n";
    } else {
      md << "not run\n";
    }
    md << "\n## Shield log\n\n";
    std::size_t decisions = 0, triggered = 0, retrieved = 0;
    double q_sum = 0.0;
    std::size_t q_n = 0;
    if (std::ifstream is(path("shield_log.jsonl"), std::ios::binary); is) {
      std::string line;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        ++decisions;
        triggered += j.at("triggered").get<bool>() ? 1 : 0;
        retrieved += j.at("source") == "retrieval" ? 1 : 0;
        if (!j.at("q").is_null()) {
          q_sum += j.at("q").get<double>();
          ++q_n;
        }
      }
    }
    md << markdown_table({"decisions", "triggered", "retrievals", "mean q", "delta", "bank size", "a_min", "dwell"},
                         {{std::to_string(decisions), std::to_string(triggered), std::to_string(retrieved),
                           q_n ? fmt(q_sum / static_cast<double>(q_n)) : "-", fmt(shield.at("delta").get<double>()),
                           shield.at("bank_size").dump(), fmt(shield.at("a_min").get<double>(), 2),
                           shield.at("dwell").dump()}});
    (void)conf;
    (void)policy;
    detail::write_text_file(path("report.md"), md.str());
  }

  // --- artifact loading -----------------------------------------------------

  std::vector<TraceRecord> load_traces() const {
    auto buf = read_traces(path("traces.jsonl").string());
    if (buf.empty()) throw ArtifactError(path("traces.jsonl").string() + ": no trace records");
    return buf.snapshot();
  }

  std::shared_ptr<const Conceptizer> load_conceptizer() const {
    const nlohmann::json j = load("conceptizer.json");
    try {
      return std::make_shared<const Conceptizer>(Conceptizer::from_json(j.at("model")));
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(path("conceptizer.json").string() + ": " + e.what());
    }
  }

  Student load_student() const {
    const nlohmann::json j = load("policy.json");
    std::shared_ptr<const Conceptizer> cz;
    if (j.value("features", "") == "concepts") cz = load_conceptizer();
    return Student::from_json(j, cz);
  }

  PolicyFactory teacher_factory() const {
    const nlohmann::json j = load("teacher.json");
    if (j.at("kind") == "neural") {
      auto t = std::make_shared<const NeuralTeacher>(NeuralTeacher::from_json(j.at("model")));
      return stateless([t](const KpmState& s, std::span<const double>) { return PolicyDecision{t->act(s).a, {}}; });
    }
    ScriptedTeacherConfig sc{cfg_.teacher.sigma_z, cfg_.teacher.head_temperature, cfg_.teacher.switch_logit, 0};
    const Task task = cfg_.task;
    return [sc, task](std::uint64_t seed) -> Policy {
      ScriptedTeacherConfig c = sc;
      c.noise_seed = derive_seed(seed, 2);
      auto t = std::make_shared<ScriptedTeacher>(task == Task::slicing ? ScriptedTeacher::slicing(c)
                                                                       : ScriptedTeacher::handover(c));
      return [t](const KpmState& s, std::span<const double> ct) { return PolicyDecision{t->act(s, ct).a, {}}; };
    };
  }

  Shield load_shield(ShieldStages stages) const {
    const nlohmann::json sj = load("shield.json");
    const nlohmann::json rj = load("risk.json");
    SliceBounds bounds{sj.at("a_min").get<double>(), sj.at("a_max").get<double>()};
    auto rules = default_correction_rules(cfg_.task, bounds, sj.at("dwell").get<int>());
    auto est = std::make_shared<const RiskEstimator>(RiskEstimator::from_json(rj.at("model")));
    auto bank = std::make_shared<const SafeBank>(read_bank(path("bank.jsonl").string(), cfg_.shield.bank.capacity));
    return Shield(std::move(rules), est, bank, stages);
  }

 private:
  ScriptedTeacher make_scripted(const ScriptedTeacherConfig& sc) const {
    return cfg_.task == Task::slicing ? ScriptedTeacher::slicing(sc) : ScriptedTeacher::handover(sc);
  }

  nlohmann::json load(const std::string& name) const {
    nlohmann::json j = detail::read_json_file(path(name));
    if (j.is_object() && j.contains("config_hash") && j.at("config_hash") != hash_)
      note("warning: " + name + " was produced by config " + j.at("config_hash").get<std::string>() +
           ", current config is " + hash_);
    return j;
  }

  std::vector<std::pair<std::string, Student>> ablation_students() const {
    const auto recs = load_traces();
    const auto cz = load_conceptizer();
    std::vector<std::pair<std::string, Student>> out;
    {
      const RawFeatures raw = RawFeatures::fit(cfg_.task, recs);
      const auto feats = detail::features_of(recs, [&](const KpmState& s) { return raw(s); });
      out.emplace_back("no-conceptizer", compile_student(cfg_, distill_program(cfg_, recs, feats), nullptr, raw));
    }
    {
      ConceptizerConfig cc = cfg_.concepts.cfg;
      cc.seed = derive_seed(cfg_.seed, 6);
      const ConceptizerFit fit = train_conceptizer(unmasked(cfg_.concept_template()), std::span<const TraceRecord>(recs), cc);
      auto dense_cz = std::make_shared<const Conceptizer>(fit.model);
      const auto feats = detail::features_of(recs, [&](const KpmState& s) { return dense_cz->conceptize(s); });
      out.emplace_back("no-masking", compile_student(cfg_, distill_program(cfg_, recs, feats), dense_cz));
    }
    const auto feats = detail::features_of(recs, [&](const KpmState& s) { return cz->conceptize(s); });
    std::vector<Vector> z;
    for (const auto& r : recs) z.push_back(r.z);
    for (auto [name, hidden] : {std::pair<const char*, std::size_t>{"linear", 0}, {"dense", 64}}) {
      Student s;
      s.task = cfg_.task;
      s.kind = StudentKind::net;
      s.conceptizer = cz;
      s.head_temperature = cfg_.teacher.head_temperature;
      s.net = fit_regression_net(feats, z, hidden, 3000, derive_seed(cfg_.seed, 40 + hidden));
      out.emplace_back(name, std::move(s));
    }
    return out;
  }

  void latency(const Student& student) {
    const auto recs = load_traces();
    const std::size_t n = std::min<std::size_t>(recs.size(), 10000);
    std::vector<KpmState> corpus;
    for (std::size_t i = 0; i < n; ++i) corpus.push_back(recs[i].s);
    std::vector<TimedPolicy> ps;
    const nlohmann::json tj = load("teacher.json");
    std::shared_ptr<const NeuralTeacher> nt;
    if (tj.at("kind") == "neural") {
      nt = std::make_shared<const NeuralTeacher>(NeuralTeacher::from_json(tj.at("model")));
      ps.push_back({"teacher", [nt](const KpmState& s) { return nt->act(s).a[0]; }});
    }
    auto sp = std::make_shared<const Student>(student);
    ps.push_back({"student", [sp](const KpmState& s) { return sp->decide(s).a[0]; }});
    const LatencyReport rep = latency_bench(ps, corpus, cfg_.eval.latency_reps, cfg_.eval.latency_inputs);
    nlohmann::json results = nlohmann::json::array();
    for (const auto& r : rep.results)
      results.push_back({{"name", r.name}, {"median_ns", r.median_ns}, {"per_rep_median_ns", r.per_rep_median_ns}});
    nlohmann::json j{{"config_hash", hash_},
                     {"inputs", cfg_.eval.latency_inputs},
                     {"reps", cfg_.eval.latency_reps},
                     {"low_confidence", rep.low_confidence},
                     {"results", results}};
    if (nt) {
      j["ratio"] = rep.speedup("teacher", "student");
      note("latency ratio teacher/student " + fmt(j["ratio"].get<double>(), 2));
    } else {
      j["ratio"] = nullptr;
    }
    detail::write_json_file(path("latency.json"), j);
  }

  void note(const std::string& msg) const {
    if (log_) *log_ << "[symran] " << msg << '\n' << std::flush;
  }

  RunConfig cfg_;
  std::string hash_;
  std::filesystem::path dir_;
  std::ostream* log_;
};

}  // namespace symran
