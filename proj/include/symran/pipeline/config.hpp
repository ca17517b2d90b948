#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "symran/concept/conceptizer.hpp"
#include "symran/concept/template.hpp"
#include "symran/core/errors.hpp"
#include "symran/dsr/generator.hpp"
#include "symran/env/env.hpp"
#include "symran/logic/distill.hpp"
#include "symran/shield/bank.hpp"
#include "symran/shield/correction.hpp"
#include "symran/shield/risk.hpp"
#include "symran/teacher/neural.hpp"

namespace symran {

struct TeacherSection {
  std::string kind = "neural";  // neural | scripted
  double sigma_z = 0.02;
  double head_temperature = 1.0;
  double switch_logit = 2.0;
  std::size_t bc_records = 10000;  // scripted demonstrations the neural teacher is cloned from
  std::size_t trace_steps = 10000;  // teacher decisions logged for distillation
  BcConfig bc{.steps = 5000};
};

struct ConceptSection {
  std::optional<nlohmann::json> tmpl;  // unset = built-in default template
  bool masked = true;
  ConceptizerConfig cfg;
};

struct ShieldSection {
  BankConfig bank;
  double percentile = 95.0;
  SliceBounds bounds{0.25, 1.0};
  int dwell = 2;
  RiskConfig risk;
};

struct AuditSection {
  std::size_t probes = 50;
  std::size_t n_ig = 256;
};

struct EvalSection {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t steps = 2000;
  bool ablations = false;
  std::size_t latency_inputs = 100000;
  std::size_t latency_reps = 3;
};

struct RunConfig {
  std::uint64_t seed = 1;
  Task task = Task::slicing;
  std::string output_dir = "out";
  EnvConfig env;
  TeacherSection teacher;
  ConceptSection concepts;
  DsrConfig dsr{.iterations = 20};
  LogicConfig logic;
  ShieldSection shield;
  AuditSection audit;
  EvalSection eval;

  void validate() const;
  ConceptTemplate concept_template() const;
};

namespace detail {

/// Strict object reader: every key must be consumed, or finish() names the
/// first unknown one.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void operator()(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const nlohmann::json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("unknown key \"" + it.key() + "\"" + (path_.empty() ? "" : " in section \"" + path_ + "\""));
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class ConfigWriter {
 public:
  template <class T>
  void operator()(const char* key, const T& v) {
    j[key] = v;
  }
  nlohmann::json j = nlohmann::json::object();
};

template <class V, class S>
void visit_slicing(V& v, S& s) {
  v("ue_min", s.ue_min);
  v("ue_max", s.ue_max);
  v("n_prb", s.n_prb);
  v("step_s", s.step_s);
  v("churn_prob", s.churn_prob);
  v("demand", s.demand);
  v("demand_switch_prob", s.demand_switch_prob);
  v("demand_jitter", s.demand_jitter);
  v("base_delay_ms", s.base_delay_ms);
  v("max_queue_s", s.max_queue_s);
  v("cqi_phi", s.cqi_phi);
  v("cqi_sigma", s.cqi_sigma);
  v("cqi_mean_lo", s.cqi_mean_lo);
  v("cqi_mean_hi", s.cqi_mean_hi);
  v("mbps_per_prb_per_eff", s.mbps_per_prb_per_eff);
}

template <class V, class H>
void visit_handover(V& v, H& h) {
  v("length_m", h.length_m);
  v("margin_m", h.margin_m);
  v("p0_dbm", h.p0_dbm);
  v("pathloss_exp", h.pathloss_exp);
  v("shadow_sigma_db", h.shadow_sigma_db);
  v("shadow_corr", h.shadow_corr);
  v("speed_corr", h.speed_corr);
  v("speed_sigma", h.speed_sigma);
  v("respawn_prob", h.respawn_prob);
  v("load_mean", h.load_mean);
  v("load_theta", h.load_theta);
  v("load_sigma", h.load_sigma);
  v("noise_floor_dbm", h.noise_floor_dbm);
  v("bandwidth_mhz", h.bandwidth_mhz);
  v("base_delay_ms", h.base_delay_ms);
  v("interruption_ms", h.interruption_ms);
}

template <class V, class R>
void visit_reward(V& v, R& r) {
  v("thp_target", r.thp_target);
  v("dly_target", r.dly_target);
  v("ho_thp_target", r.ho_thp_target);
  v("ho_dly_target", r.ho_dly_target);
  v("beta1", r.beta1);
  v("beta2", r.beta2);
  v("beta3", r.beta3);
  v("beta4", r.beta4);
  v("gamma", r.gamma);
  v("horizon", r.horizon);
}

template <class V, class T>
void visit_teacher(V& v, T& t) {
  v("kind", t.kind);
  v("sigma_z", t.sigma_z);
  v("head_temperature", t.head_temperature);
  v("switch_logit", t.switch_logit);
  v("bc_records", t.bc_records);
  v("trace_steps", t.trace_steps);
  v("bc_steps", t.bc.steps);
  v("bc_batch", t.bc.batch);
  v("bc_hidden", t.bc.hidden);
  v("bc_lr", t.bc.lr);
  v("bc_final_lr", t.bc.final_lr);
  v("bc_holdout_frac", t.bc.holdout_frac);
}

template <class V, class C>
void visit_concepts(V& v, C& c) {
  v("masked", c.masked);
  v("d_h", c.cfg.d_h);
  v("hidden", c.cfg.hidden);
  v("batch", c.cfg.batch);
  v("max_epochs", c.cfg.max_epochs);
  v("patience", c.cfg.patience);
  v("lr", c.cfg.lr);
}

template <class V, class D>
void visit_dsr(V& v, D& d) {
  v("d_max", d.d_max);
  v("batch", d.batch);
  v("iterations", d.iterations);
  v("max_evaluations", d.max_evaluations);
  v("epsilon", d.epsilon);
  v("const_steps", d.const_steps);
  v("max_fit_samples", d.max_fit_samples);
  v("hidden", d.hidden);
  v("lr", d.lr);
  v("entropy_weight", d.entropy_weight);
  v("constants", d.constants);
}

template <class V, class L>
void visit_logic(V& v, L& l) {
  v("kappa", l.kappa);
  v("w_th", l.w_th);
  v("top_triples", l.top_triples);
  v("comparisons", l.comparisons);
  v("init_gain", l.init_gain);
  v("steps", l.steps);
  v("batch", l.batch);
  v("lr", l.lr);
  v("lr_final", l.lr_final);
}

template <class V, class S>
void visit_shield(V& v, S& s) {
  v("horizon", s.bank.horizon);
  v("tolerance", s.bank.tolerance);
  v("capacity", s.bank.capacity);
  v("percentile", s.percentile);
  v("a_min", s.bounds.a_min);
  v("a_max", s.bounds.a_max);
  v("dwell", s.dwell);
  v("risk_hidden", s.risk.hidden);
  v("risk_steps", s.risk.steps);
  v("risk_batch", s.risk.batch);
  v("risk_lr", s.risk.lr);
}

template <class V, class A>
void visit_audit(V& v, A& a) {
  v("probes", a.probes);
  v("n_ig", a.n_ig);
}

template <class V, class E>
void visit_eval(V& v, E& e) {
  v("seeds", e.seeds);
  v("steps", e.steps);
  v("ablations", e.ablations);
  v("latency_inputs", e.latency_inputs);
  v("latency_reps", e.latency_reps);
}

inline Op op_from_symbol(const std::string& s) {
  for (Op op : {Op::add, Op::sub, Op::mul, Op::div, Op::log, Op::exp})
    if (op_symbol(op) == s) return op;
  throw ConfigError("dsr.operators: unknown operator \"" + s + "\"");
}

}  // namespace detail

inline void RunConfig::validate() const {
  env.validate();
  if (env.task != task) throw ConfigError("env task differs from run task");
  if (teacher.kind != "neural" && teacher.kind != "scripted")
    throw ConfigError("teacher.kind must be \"neural\" or \"scripted\"");
  if (!env.expose_true_concepts)
    throw ConfigError("env.expose_true_concepts must be true: the scripted teacher (or the demonstrations a neural teacher is cloned from) reads the true concepts");
  if (teacher.sigma_z < 0) throw ConfigError("teacher.sigma_z must be >= 0");
  if (teacher.trace_steps == 0) throw ConfigError("teacher.trace_steps must be > 0");
  concepts.cfg.validate();
  dsr.validate();
  logic.validate();
  shield.bank.validate();
  shield.bounds.validate(action_dim(Task::slicing));
  shield.risk.validate();
  if (!(shield.percentile > 0 && shield.percentile <= 100)) throw ConfigError("shield.percentile must lie in (0, 100]");
  if (shield.dwell < 1) throw ConfigError("shield.dwell must be >= 1");
  if (shield.bank.horizon > env.reward.horizon) throw ConfigError("shield.horizon T' must not exceed the episode horizon");
  if (audit.probes == 0) throw ConfigError("audit.probes must be > 0");
  if (audit.n_ig < 16) throw ConfigError("audit.n_ig must be >= 16");
  if (eval.seeds.size() < 3) throw ConfigError("eval.seeds needs at least 3 seeds");
  if (eval.latency_reps == 0) throw ConfigError("eval.latency_reps must be >= 1");
  (void)concept_template();
}

/// Concept template with masking optionally removed (ablation): every concept
/// then reads every metric of every entity.
inline ConceptTemplate unmasked(const ConceptTemplate& t) {
  std::vector<int> all(static_cast<std::size_t>(kpm::metric_count(t.task())));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  std::vector<ConceptSpec> specs;
  for (const auto& c : t.concepts()) specs.push_back({c.name, EntitySelector::parse("all"), all});
  return ConceptTemplate(t.task(), std::move(specs));
}

inline ConceptTemplate RunConfig::concept_template() const {
  ConceptTemplate t = concepts.tmpl ? ConceptTemplate::from_json(task, *concepts.tmpl) : default_template(task);
  return concepts.masked ? t : unmasked(t);
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::ConfigReader;
  RunConfig c;
  ConfigReader top(j, "");
  for (const char* key : {"seed", "task"})
    if (!j.contains(key)) throw ConfigError(std::string("missing required key \"") + key + "\"");
  top("seed", c.seed);
  std::string task;
  top("task", task);
  try {
    c.task = task_from_string(task);
  } catch (const Error&) {
    throw ConfigError("task must be \"slicing\" or \"handover\", got \"" + task + "\"");
  }
  c.env.task = c.task;
  top("output_dir", c.output_dir);
  if (j.contains("env")) {
    ConfigReader env(top.raw("env"), "env");
    env("noise_frac", c.env.noise_frac);
    env("expose_true_concepts", c.env.expose_true_concepts);
    for (const char* sub : {"slicing", "handover", "reward"}) {
      if (!env.has(sub)) continue;
      ConfigReader r(env.raw(sub), std::string("env.") + sub);
      if (std::string(sub) == "slicing") detail::visit_slicing(r, c.env.slicing);
      else if (std::string(sub) == "handover") detail::visit_handover(r, c.env.handover);
      else detail::visit_reward(r, c.env.reward);
      r.finish();
    }
    env.finish();
  }
  auto section = [&](const char* key, auto&& fn) {
    if (!j.contains(key)) return;
    ConfigReader r(top.raw(key), key);
    fn(r);
    r.finish();
  };
  section("teacher", [&](ConfigReader& r) { detail::visit_teacher(r, c.teacher); });
  section("concepts", [&](ConfigReader& r) {
    detail::visit_concepts(r, c.concepts);
    if (r.has("template")) {
      const auto& t = r.raw("template");
      if (t.is_string()) {
        if (t.get<std::string>() != "default") throw ConfigError("concepts.template must be \"default\" or a list");
      } else {
        c.concepts.tmpl = t;
      }
    }
  });
  c.logic.comparisons = default_comparisons(c.task);
  section("dsr", [&](ConfigReader& r) {
    detail::visit_dsr(r, c.dsr);
    if (r.has("operators")) {
      c.dsr.operators.clear();
      for (const auto& s : r.raw("operators")) {
        if (!s.is_string()) throw ConfigError("dsr.operators: expected strings");
        c.dsr.operators.push_back(detail::op_from_symbol(s.get<std::string>()));
      }
    }
  });
  section("logic", [&](ConfigReader& r) { detail::visit_logic(r, c.logic); });
  section("shield", [&](ConfigReader& r) { detail::visit_shield(r, c.shield); });
  section("audit", [&](ConfigReader& r) { detail::visit_audit(r, c.audit); });
  section("eval", [&](ConfigReader& r) { detail::visit_eval(r, c.eval); });
  top.finish();
  c.validate();
  return c;
}

/// Canonical form with every default filled in. output_dir is excluded: it
/// does not change any artifact.
inline nlohmann::json canonical_json(const RunConfig& c) {
  using detail::ConfigWriter;
  nlohmann::json j;
  j["seed"] = c.seed;
  j["task"] = std::string(to_string(c.task));
  ConfigWriter s, h, r, env;
  detail::visit_slicing(s, c.env.slicing);
  detail::visit_handover(h, c.env.handover);
  detail::visit_reward(r, c.env.reward);
  env("noise_frac", c.env.noise_frac);
  env("expose_true_concepts", c.env.expose_true_concepts);
  env.j["slicing"] = s.j;
  env.j["handover"] = h.j;
  env.j["reward"] = r.j;
  j["env"] = env.j;
  ConfigWriter t, cc, d, l, sh, a, e;
  detail::visit_teacher(t, c.teacher);
  detail::visit_concepts(cc, c.concepts);
  cc.j["template"] = c.concepts.tmpl ? *c.concepts.tmpl : nlohmann::json("default");
  detail::visit_dsr(d, c.dsr);
  std::vector<std::string> ops;
  for (Op op : c.dsr.operators) ops.emplace_back(op_symbol(op));
  d.j["operators"] = ops;
  detail::visit_logic(l, c.logic);
  detail::visit_shield(sh, c.shield);
  detail::visit_audit(a, c.audit);
  detail::visit_eval(e, c.eval);
  j["teacher"] = t.j;
  j["concepts"] = cc.j;
  j["dsr"] = d.j;
  j["logic"] = l.j;
  j["shield"] = sh.j;
  j["audit"] = a.j;
  j["eval"] = e.j;
  return j;
}

/// 64-bit FNV-1a of the canonical JSON; object keys are sorted by the JSON
/// library, so key order in the source file does not matter.
inline std::string config_hash(const RunConfig& c) {
  const std::string text = canonical_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline nlohmann::json schema_of(const nlohmann::json& v) {
  using nlohmann::json;
  if (v.is_object()) {
    json props = json::object();
    for (const auto& [k, sub] : v.items()) props[k] = schema_of(sub);
    return {{"type", "object"}, {"additionalProperties", false}, {"properties", props}};
  }
  json s;
  if (v.is_boolean()) s["type"] = "boolean";
  else if (v.is_number_unsigned() || v.is_number_integer()) s["type"] = "integer";
  else if (v.is_number()) s["type"] = "number";
  else if (v.is_string()) s["type"] = "string";
  else if (v.is_array()) {
    s["type"] = "array";
    if (!v.empty()) s["items"] = schema_of(v.front());
  }
  s["default"] = v;
  return s;
}

}  // namespace detail

/// JSON Schema (draft 2020-12) of the run config, derived from the same key
/// lists the parser reads. Defaults are those of a slicing run.
inline nlohmann::json run_config_schema() {
  using nlohmann::json;
  json s = detail::schema_of(canonical_json(RunConfig{}));
  auto& p = s["properties"];
  p["task"] = {{"enum", {"slicing", "handover"}}};
  p["seed"] = {{"type", "integer"}, {"minimum", 0}};
  p["output_dir"] = {{"type", "string"}, {"default", "out"}};
  p["teacher"]["properties"]["kind"]["enum"] = {"neural", "scripted"};
  p["concepts"]["properties"]["template"] = {
      {"description", "\"default\" or a list of {name, entities, metrics} concept specs"},
      {"anyOf", {{{"const", "default"}}, {{"type", "array"}}, {{"type", "object"}}}}};
  p["logic"]["properties"]["comparisons"] = {
      {"type", "array"},
      {"items", {{"type", "array"}, {"items", {{"type", "integer"}}}, {"minItems", 2}, {"maxItems", 2}}}};
  p["dsr"]["properties"]["operators"]["items"]["enum"] = {"+", "-", "*", "/", "log", "exp"};
  return {{"$schema", "https://json-schema.org/draft/2020-12/schema"},
          {"title", "symran run config"},
          {"type", "object"},
          {"required", {"seed", "task"}},
          {"additionalProperties", false},
          {"properties", p}};
}

/// Reads a config file; SYMRAN_SEED (if set) overrides the seed.
inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  RunConfig c = parse_run_config(j);
  if (const char* s = std::getenv("SYMRAN_SEED"); s && *s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (*end != '\0') throw ConfigError("SYMRAN_SEED must be an unsigned integer");
    c.seed = v;
  }
  return c;
}

}  // namespace symran
